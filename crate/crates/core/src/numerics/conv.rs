//! One-dimensional multi-channel convolutions lowered to GEMM.
//!
//! Inputs are laid out `[batch, len, channels]` and kernels
//! `[out_channels, in_channels, width]`. The operation is the
//! cross-correlation `y[t, o] = b[o] + Σ_c Σ_j K[o, c, j] · x[t + d·j - pad, c]`
//! where `pad = d·(width - 1)` in causal mode and `0` in valid mode. Taps
//! that fall outside the input read zero.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Kernel, bias and geometry of a 1-D convolution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Conv1dParams {
    /// `out_channels × in_channels × width`, row-major.
    pub kernel: Vec<f64>,
    pub bias: Vec<f64>,
    pub out_channels: usize,
    pub in_channels: usize,
    pub width: usize,
    pub dilation: usize,
    pub causal: bool,
}

impl Conv1dParams {
    pub fn new(
        out_channels: usize,
        in_channels: usize,
        width: usize,
        dilation: usize,
        causal: bool,
    ) -> Result<Self> {
        if width == 0 || dilation == 0 || out_channels == 0 || in_channels == 0 {
            return Err(Error::InvalidArgument(
                "conv1d width, dilation and channel counts must be positive".into(),
            ));
        }
        Ok(Self {
            kernel: vec![0.0; out_channels * in_channels * width],
            bias: vec![0.0; out_channels],
            out_channels,
            in_channels,
            width,
            dilation,
            causal,
        })
    }

    /// Single-channel kernel from a tap list.
    pub fn from_taps(taps: &[f64], dilation: usize, causal: bool) -> Result<Self> {
        let mut p = Self::new(1, 1, taps.len(), dilation, causal)?;
        p.kernel.copy_from_slice(taps);
        Ok(p)
    }
}

/// Geometry of one convolution call.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub batch: usize,
    pub len_in: usize,
    pub len_out: usize,
    pub cin: usize,
    pub cout: usize,
    pub width: usize,
    pub dilation: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub fn new(
        batch: usize,
        len_in: usize,
        cin: usize,
        cout: usize,
        width: usize,
        dilation: usize,
        causal: bool,
    ) -> Result<Self> {
        if len_in == 0 || batch == 0 {
            return Err(Error::Empty("conv1d input".into()));
        }
        if width == 0 || dilation == 0 {
            return Err(Error::InvalidArgument("conv1d width and dilation must be ≥ 1".into()));
        }
        let span = dilation * (width - 1);
        let (len_out, pad) = if causal {
            (len_in, span)
        } else {
            if span >= len_in {
                return Err(Error::Shape(format!(
                    "valid conv with span {} needs more than {len_in} samples",
                    span + 1
                )));
            }
            (len_in - span, 0)
        };
        Ok(Self {
            batch,
            len_in,
            len_out,
            cin,
            cout,
            width,
            dilation,
            pad,
        })
    }

    fn m(&self) -> usize {
        self.batch * self.len_out
    }

    /// Whether the input can be used directly as the column matrix.
    fn is_pointwise(&self) -> bool {
        self.width == 1 && self.pad == 0 && self.len_in == self.len_out
    }
}

/// `C[m×n] = beta·C + A[m×k] · B[k×n]` with explicit strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    beta: f64,
    c: &mut [f64],
    (rsc, csc): (usize, usize),
) {
    if m == 0 || n == 0 || k == 0 {
        return;
    }
    // SAFETY: callers pass buffers sized for the given strides and extents.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            csc as isize,
        );
    }
}

impl ConvGeom {
    /// Output rows `t0..t1` whose tap `j` reads inside the signal, and the
    /// input row read by `t0`.
    fn tap_range(&self, j: usize) -> Option<(usize, usize, usize)> {
        let off = self.dilation * j;
        let t0 = self.pad.saturating_sub(off);
        let t1 = self.len_out.min((self.len_in + self.pad).saturating_sub(off));
        (t0 < t1).then(|| (t0, t1, t0 + off - self.pad))
    }
}

/// Forward pass. `x` is `[batch, len_in, cin]`, `w` is `[cout, cin, width]`.
/// Each tap is one matrix product over the rows it reaches, so no column
/// matrix is materialized.
pub fn conv1d_forward(x: &[f64], w: &[f64], bias: Option<&[f64]>, g: &ConvGeom) -> Vec<f64> {
    let (cin, cout, width) = (g.cin, g.cout, g.width);
    let mut y = vec![0.0; g.batch * g.len_out * cout];
    if let Some(b) = bias {
        for row in y.chunks_exact_mut(cout) {
            row.copy_from_slice(b);
        }
    }
    if g.is_pointwise() {
        gemm(g.m(), cin, cout, x, (cin, 1), w, (1, cin), 1.0, &mut y, (cout, 1));
        return y;
    }
    for j in 0..width {
        let Some((t0, t1, s0)) = g.tap_range(j) else { continue };
        for b in 0..g.batch {
            let xb = &x[(b * g.len_in + s0) * cin..];
            let yb = &mut y[(b * g.len_out + t0) * cout..];
            gemm(t1 - t0, cin, cout, xb, (cin, 1), &w[j..], (width, cin * width), 1.0, yb, (cout, 1));
        }
    }
    y
}

/// Gradients of [`conv1d_forward`] with respect to input, kernel and bias.
/// The input gradient is only computed when `need_dx` is set.
pub fn conv1d_backward(
    x: &[f64],
    w: &[f64],
    dy: &[f64],
    g: &ConvGeom,
    need_dx: bool,
) -> (Option<Vec<f64>>, Vec<f64>, Vec<f64>) {
    let (cin, cout, width) = (g.cin, g.cout, g.width);
    let mut db = vec![0.0; cout];
    for row in dy.chunks_exact(cout) {
        for (d, v) in db.iter_mut().zip(row) {
            *d += v;
        }
    }
    let mut dw = vec![0.0; cout * cin * width];
    let mut dx = need_dx.then(|| vec![0.0; g.batch * g.len_in * cin]);
    if g.is_pointwise() {
        gemm(cout, g.m(), cin, dy, (1, cout), x, (cin, 1), 0.0, &mut dw, (cin, 1));
        if let Some(dx) = dx.as_mut() {
            gemm(g.m(), cout, cin, dy, (cout, 1), w, (cin, 1), 0.0, dx, (cin, 1));
        }
        return (dx, dw, db);
    }
    for j in 0..width {
        let Some((t0, t1, s0)) = g.tap_range(j) else { continue };
        for b in 0..g.batch {
            let dyb = &dy[(b * g.len_out + t0) * cout..];
            let xb = &x[(b * g.len_in + s0) * cin..];
            gemm(cout, t1 - t0, cin, dyb, (1, cout), xb, (cin, 1), 1.0, &mut dw[j..], (cin * width, width));
            if let Some(dx) = dx.as_mut() {
                let dxb = &mut dx[(b * g.len_in + s0) * cin..];
                gemm(t1 - t0, cout, cin, dyb, (cout, 1), &w[j..], (cin * width, width), 1.0, dxb, (cin, 1));
            }
        }
    }
    (dx, dw, db)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn direct(x: &[f64], w: &[f64], g: &ConvGeom) -> Vec<f64> {
        let mut y = vec![0.0; g.batch * g.len_out * g.cout];
        for b in 0..g.batch {
            for t in 0..g.len_out {
                for o in 0..g.cout {
                    let mut acc = 0.0;
                    for c in 0..g.cin {
                        for j in 0..g.width {
                            let pos = (t + g.dilation * j) as isize - g.pad as isize;
                            if pos >= 0 && (pos as usize) < g.len_in {
                                acc += w[(o * g.cin + c) * g.width + j]
                                    * x[(b * g.len_in + pos as usize) * g.cin + c];
                            }
                        }
                    }
                    y[(b * g.len_out + t) * g.cout + o] = acc;
                }
            }
        }
        y
    }

    #[test]
    fn gemm_path_matches_direct_summation() {
        let g = ConvGeom::new(2, 11, 3, 4, 3, 2, true).unwrap();
        let x: Vec<f64> = (0..2 * 11 * 3).map(|i| ((i * 7) % 13) as f64 - 6.0).collect();
        let w: Vec<f64> = (0..4 * 3 * 3).map(|i| ((i * 5) % 11) as f64 * 0.1).collect();
        let y = conv1d_forward(&x, &w, None, &g);
        let oracle = direct(&x, &w, &g);
        for (a, b) in y.iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-12);
        }
        let g = ConvGeom::new(2, 11, 3, 4, 3, 2, false).unwrap();
        assert_eq!(g.len_out, 7);
        let y = conv1d_forward(&x, &w, None, &g);
        let oracle = direct(&x, &w, &g);
        for (a, b) in y.iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn valid_mode_rejects_short_input() {
        assert!(ConvGeom::new(1, 4, 1, 1, 3, 2, false).is_err());
        assert!(ConvGeom::new(1, 0, 1, 1, 1, 1, true).is_err());
    }
}
