//! Finite-difference check of a model's parameter gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::Model;
use crate::error::{Error, Result};
use crate::numerics::{Mode, Tape, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamCheckReport {
    pub max_rel_error: f64,
    /// Parameter holding the largest error.
    pub worst: Option<String>,
    pub checked: usize,
    /// Coordinates skipped because the loss has a kink there.
    pub nonsmooth: usize,
    /// Parameters whose analytic gradient is identically zero.
    pub dead: Vec<String>,
}

fn loss(model: &Model, x: &Tensor, labels: Option<&[usize]>, mode: Mode, seed: u64) -> Result<(Tape, crate::numerics::Var)> {
    let mut tape = Tape::new(mode, seed);
    let xv = tape.constant(x.clone());
    let f = model.forward(&mut tape, xv)?;
    let l = match labels {
        Some(l) => tape.cross_entropy(f.output, l)?,
        None => tape.mse(f.output, xv)?,
    };
    Ok((tape, l))
}

/// Compares tape gradients of the training loss with central differences
/// of step `h` on up to `per_param` random coordinates of every trainable
/// array. Dropout masks are fixed by reusing one tape seed.
pub fn check_param_gradients(
    model: &mut Model,
    x: &Tensor,
    labels: Option<&[usize]>,
    mode: Mode,
    per_param: usize,
    h: f64,
    seed: u64,
) -> Result<ParamCheckReport> {
    if !(h > 0.0) {
        return Err(Error::InvalidArgument(format!("step h = {h} must be positive")));
    }
    if model.is_autoencoder() == labels.is_some() {
        return Err(Error::InvalidArgument("labels are needed exactly for classifiers".into()));
    }
    let (mut tape, l) = loss(model, x, labels, mode, seed)?;
    let f0 = tape.value(l).data()[0];
    tape.backward(l)?;
    model.store.zero_grad();
    tape.write_param_grads(&mut model.store);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = ParamCheckReport {
        max_rel_error: 0.0,
        worst: None,
        checked: 0,
        nonsmooth: 0,
        dead: Vec::new(),
    };
    let ids: Vec<_> = model.store.trainable_ids().collect();
    for id in ids {
        let entry = model.store.entry(id);
        let name = entry.name.clone();
        let grad = entry.grad.clone();
        if grad.iter().all(|&g| g == 0.0) {
            report.dead.push(name.clone());
        }
        let n = entry.value.len();
        for i in sample(&mut rng, n, per_param.min(n)) {
            let orig = model.store.value(id).data()[i];
            model.store.value_mut(id).data_mut()[i] = orig + h;
            let fp = {
                let (t, l) = loss(model, x, labels, mode, seed)?;
                t.value(l).data()[0]
            };
            model.store.value_mut(id).data_mut()[i] = orig - h;
            let fm = {
                let (t, l) = loss(model, x, labels, mode, seed)?;
                t.value(l).data()[0]
            };
            model.store.value_mut(id).data_mut()[i] = orig;
            let scale = grad[i].abs().max(1.0);
            if ((fp - f0) / h - (f0 - fm) / h).abs() > 1e-3 * scale {
                report.nonsmooth += 1;
                continue;
            }
            report.checked += 1;
            let err = (grad[i] - (fp - fm) / (2.0 * h)).abs() / scale;
            if err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst = Some(name.clone());
            }
        }
    }
    model.store.zero_grad();
    Ok(report)
}
