//! Central finite-difference oracle for tape gradients.

use super::tape::{Mode, Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct GradCheckOptions {
    pub h: f64,
    pub mode: Mode,
    pub seed: u64,
    /// Coordinates to probe; all of them when `None`.
    pub coords: Option<Vec<usize>>,
    /// One-sided slopes differing by more than this (relative) mark a kink.
    pub kink_tol: f64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            h: 1e-6,
            mode: Mode::Eval,
            seed: 0,
            coords: None,
            kink_tol: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// Max over checked coordinates of `|analytic − numeric| / max(1, |analytic|)`.
    pub max_rel_error: f64,
    pub checked: usize,
    /// Coordinates excluded because the map is not smooth there.
    pub nonsmooth: Vec<usize>,
}

fn eval<F>(f: &F, x: &Tensor, opts: &GradCheckOptions) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    let mut tape = Tape::new(opts.mode, opts.seed);
    let xv = tape.leaf(x.clone(), false);
    let out = f(&mut tape, xv)?;
    let v = tape.value(out);
    if v.len() != 1 {
        return Err(Error::Shape("finite-difference check needs a scalar map".into()));
    }
    Ok(v.data()[0])
}

/// Compares the tape gradient of the scalar map `f` at `x` against central
/// differences with step `h`.
pub fn finite_diff_check<F>(f: F, x: &Tensor, h: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    finite_diff_check_with(
        f,
        x,
        &GradCheckOptions {
            h,
            ..Default::default()
        },
    )
}

pub fn finite_diff_check_with<F>(f: F, x: &Tensor, opts: &GradCheckOptions) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    if !(opts.h > 0.0) {
        return Err(Error::InvalidArgument(format!("step h = {} must be positive", opts.h)));
    }
    let mut tape = Tape::new(opts.mode, opts.seed);
    let xv = tape.leaf(x.clone(), true);
    let out = f(&mut tape, xv)?;
    tape.backward(out)?;
    let analytic = tape
        .grad(xv)
        .map(Tensor::into_data)
        .unwrap_or_else(|| vec![0.0; x.len()]);
    let f0 = tape.value(out).data()[0];

    let coords: Vec<usize> = match &opts.coords {
        Some(c) => c.clone(),
        None => (0..x.len()).collect(),
    };
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        checked: 0,
        nonsmooth: Vec::new(),
    };
    let mut probe = x.clone();
    for i in coords {
        if i >= x.len() {
            return Err(Error::InvalidArgument(format!("coordinate {i} out of range")));
        }
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + opts.h;
        let fp = eval(&f, &probe, opts)?;
        probe.data_mut()[i] = orig - opts.h;
        let fm = eval(&f, &probe, opts)?;
        probe.data_mut()[i] = orig;

        let central = (fp - fm) / (2.0 * opts.h);
        let forward = (fp - f0) / opts.h;
        let backward = (f0 - fm) / opts.h;
        let scale = analytic[i].abs().max(1.0);
        if (forward - backward).abs() > opts.kink_tol * scale {
            report.nonsmooth.push(i);
            continue;
        }
        report.checked += 1;
        let err = (analytic[i] - central).abs() / scale;
        report.max_rel_error = report.max_rel_error.max(err);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::tape::PoolKind;

    #[test]
    fn half_squared_norm_is_exact() {
        let x = Tensor::new(vec![2, 3], vec![0.3, -1.2, 2.0, 0.0, 5.5, -0.7]).unwrap();
        let r = finite_diff_check(
            |t, x| {
                let s = t.scale(x, 1.0);
                let zero = t.constant(Tensor::zeros(t.value(x).shape()));
                let m = t.mse(s, zero)?;
                // mse = ‖x‖²/n, so rescale to ½‖x‖²
                Ok(t.scale(m, 0.5 * 6.0))
            },
            &x,
            // central differences are exact on quadratics, so a coarse step
            // only trims roundoff
            1e-4,
        )
        .unwrap();
        assert_eq!(r.checked, 6);
        assert!(r.max_rel_error <= 1e-9, "{}", r.max_rel_error);
    }

    #[test]
    fn max_pool_tie_is_flagged() {
        let x = Tensor::new(vec![4, 1], vec![1.0, 1.0, 0.0, 2.0]).unwrap();
        let r = finite_diff_check(
            |t, x| {
                let p = t.pool(x, 2, PoolKind::Max)?;
                Ok(t.sum(p))
            },
            &x,
            1e-6,
        )
        .unwrap();
        assert_eq!(r.nonsmooth, vec![0, 1]);
        assert!(r.max_rel_error <= 1e-9);
    }

    #[test]
    fn nonpositive_step_is_rejected() {
        let x = Tensor::scalar(1.0);
        assert!(finite_diff_check(|t, x| Ok(t.sum(x)), &x, 0.0).is_err());
    }
}
