//! Tensor-in, tensor-out entry points for the differentiable primitives.
//!
//! Each call records a throwaway tape; models use the [`Tape`] methods
//! directly so gradients can flow.

use serde::{Deserialize, Serialize};

use super::conv::Conv1dParams;
use super::tape::{Mode, PoolKind, Tape};
use super::tensor::Tensor;
use crate::error::{Error, Result};

fn squeeze_batch(t: Tensor, rank2: bool) -> Tensor {
    if rank2 {
        let (_, l, c) = t.dims3().expect("rank 3");
        t.reshape(vec![l, c]).expect("same size")
    } else {
        t
    }
}

/// Multi-channel 1-D convolution of a `[len, in_ch]` (or batched) input.
pub fn conv1d(x: &Tensor, p: &Conv1dParams) -> Result<Tensor> {
    let rank2 = x.shape().len() == 2;
    let mut tape = Tape::new(Mode::Eval, 0);
    let xv = tape.constant(x.clone());
    let w = tape.constant(Tensor::new(
        vec![p.out_channels, p.in_channels, p.width],
        p.kernel.clone(),
    )?);
    let b = tape.constant(Tensor::new(vec![p.out_channels], p.bias.clone())?);
    let y = tape.conv1d(xv, w, Some(b), p.dilation, p.causal)?;
    Ok(squeeze_batch(tape.value(y).clone(), rank2))
}

pub fn silu(x: &Tensor) -> Tensor {
    x.map(|v| v / (1.0 + (-v).exp()))
}

/// Per-channel batch-norm state with running estimates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchNormState {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub momentum: f64,
    pub eps: f64,
}

impl BatchNormState {
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: vec![1.0; channels],
            beta: vec![0.0; channels],
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
            momentum: 0.1,
            eps: 1e-5,
        }
    }

    pub fn update(&mut self, mean: &[f64], var: &[f64]) {
        let m = self.momentum;
        for c in 0..self.running_mean.len() {
            self.running_mean[c] = (1.0 - m) * self.running_mean[c] + m * mean[c];
            self.running_var[c] = (1.0 - m) * self.running_var[c] + m * var[c];
        }
    }
}

/// Batch normalization followed by inverted dropout.
pub fn norm_dropout(
    x: &Tensor,
    mode: Mode,
    bn: &mut BatchNormState,
    drop_rate: f64,
    seed: u64,
) -> Result<Tensor> {
    if !(0.0..1.0).contains(&drop_rate) {
        return Err(Error::InvalidArgument(format!("dropout rate {drop_rate} outside [0, 1)")));
    }
    let rank2 = x.shape().len() == 2;
    let ch = *x.shape().last().unwrap();
    if bn.gamma.len() != ch {
        return Err(Error::Shape(format!("batch norm over {} channels, input has {ch}", bn.gamma.len())));
    }
    let mut tape = Tape::new(mode, seed);
    let xv = tape.constant(x.clone());
    let g = tape.constant(Tensor::new(vec![ch], bn.gamma.clone())?);
    let b = tape.constant(Tensor::new(vec![ch], bn.beta.clone())?);
    let (y, stats) = tape.batch_norm(xv, g, b, (&bn.running_mean, &bn.running_var), bn.eps)?;
    if let Some(s) = stats {
        bn.update(&s.mean, &s.var);
    }
    let y = tape.dropout(y, drop_rate)?;
    let out = tape.value(y).clone();
    Ok(if rank2 && out.shape().len() == 3 {
        squeeze_batch(out, true)
    } else {
        out
    })
}

/// Non-overlapping temporal pooling by the shrinking factor `s`.
pub fn pool_shrink(x: &Tensor, s: usize, kind: PoolKind) -> Result<Tensor> {
    let rank2 = x.shape().len() == 2;
    let mut tape = Tape::new(Mode::Eval, 0);
    let xv = tape.constant(x.clone());
    let y = tape.pool(xv, s, kind)?;
    Ok(squeeze_batch(tape.value(y).clone(), rank2))
}

pub fn upsample_nearest(x: &Tensor, s: usize) -> Result<Tensor> {
    let rank2 = x.shape().len() == 2;
    let mut tape = Tape::new(Mode::Eval, 0);
    let xv = tape.constant(x.clone());
    let y = tape.upsample(xv, s)?;
    Ok(squeeze_batch(tape.value(y).clone(), rank2))
}

pub fn mse_loss(pred: &Tensor, target: &Tensor) -> Result<f64> {
    if pred.shape() != target.shape() {
        return Err(Error::Shape(format!("mse {:?} vs {:?}", pred.shape(), target.shape())));
    }
    let n = pred.len() as f64;
    Ok(pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        / n)
}
