//! Mini-batch training with Adam.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::apply_bn_updates;
use super::model::Model;
use crate::error::{Error, Result};
use crate::numerics::{AdamConfig, AdamState, Mode, Tape, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 32,
            lr: 1e-3,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    /// Sample-weighted mean training loss of each epoch.
    pub epoch_loss: Vec<f64>,
}

/// Stacks the selected windows into a `[batch, len, ch]` tensor.
pub fn stack_windows(windows: &[Vec<f64>], idx: &[usize], len: usize, ch: usize) -> Result<Tensor> {
    let mut data = Vec::with_capacity(idx.len() * len * ch);
    for &i in idx {
        let w = &windows[i];
        if w.len() != len * ch {
            return Err(Error::Shape(format!(
                "window {i} has {} values, expected {len}×{ch}",
                w.len()
            )));
        }
        data.extend_from_slice(w);
    }
    Tensor::new(vec![idx.len(), len, ch], data)
}

/// Trains `model` on `windows` (each `window_len × channels`, row-major).
/// Classifiers need `labels` and minimize cross-entropy; autoencoders
/// minimize the reconstruction MSE. Aborts on a non-finite loss.
pub fn train(model: &mut Model, windows: &[Vec<f64>], labels: Option<&[usize]>, cfg: &TrainConfig) -> Result<TrainHistory> {
    if windows.is_empty() {
        return Err(Error::Empty("training set".into()));
    }
    if cfg.batch_size == 0 {
        return Err(Error::InvalidArgument("batch size must be positive".into()));
    }
    match (model.is_autoencoder(), labels) {
        (false, None) => return Err(Error::InvalidArgument("classifier training needs labels".into())),
        (false, Some(l)) if l.len() != windows.len() => {
            return Err(Error::Shape(format!("{} labels for {} windows", l.len(), windows.len())))
        }
        _ => {}
    }
    crate::alloc::retain_freed_memory();
    let len = model.config().window_len;
    let ch = model.config().input_channels();
    let mut adam = AdamState::for_store(
        AdamConfig {
            lr: cfg.lr,
            ..Default::default()
        },
        &model.store,
    );
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..windows.len()).collect();
    let mut history = TrainHistory::default();
    let mut step = 0u64;
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for (b, idx) in order.chunks(cfg.batch_size).enumerate() {
            let x = stack_windows(windows, idx, len, ch)?;
            let mut tape = Tape::new(Mode::Train, cfg.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(step));
            step += 1;
            let xv = tape.constant(x);
            let f = model.forward(&mut tape, xv)?;
            let loss = match labels {
                Some(l) if !model.is_autoencoder() => {
                    let targets: Vec<usize> = idx.iter().map(|&i| l[i]).collect();
                    tape.cross_entropy(f.output, &targets)?
                }
                _ => tape.mse(f.output, xv)?,
            };
            let lv = tape.value(loss).data()[0];
            if !lv.is_finite() {
                return Err(Error::NonFiniteLoss {
                    loss: lv,
                    epoch,
                    batch: b,
                });
            }
            tape.backward(loss)?;
            model.store.zero_grad();
            tape.write_param_grads(&mut model.store);
            adam.step_store(&mut model.store)?;
            apply_bn_updates(&mut model.store, &f.bn_updates);
            total += lv * idx.len() as f64;
        }
        let mean = total / windows.len() as f64;
        log::debug!("epoch {epoch}: loss {mean:.6}");
        history.epoch_loss.push(mean);
    }
    Ok(history)
}

/// Per-window reconstructions in eval mode, computed in batches.
pub fn reconstruct_windows(model: &Model, windows: &[Vec<f64>], batch_size: usize) -> Result<Vec<Vec<f64>>> {
    let len = model.config().window_len;
    let ch = model.config().input_channels();
    let idx: Vec<usize> = (0..windows.len()).collect();
    let mut out = Vec::with_capacity(windows.len());
    for chunk in idx.chunks(batch_size.max(1)) {
        let x = stack_windows(windows, chunk, len, ch)?;
        let y = model.reconstruct(&x)?;
        out.extend(y.data().chunks(len * ch).map(<[f64]>::to_vec));
    }
    Ok(out)
}

/// Predicted class of every window.
pub fn predict_classes(model: &Model, windows: &[Vec<f64>], batch_size: usize) -> Result<Vec<usize>> {
    let len = model.config().window_len;
    let ch = model.config().input_channels();
    let idx: Vec<usize> = (0..windows.len()).collect();
    let mut out = Vec::with_capacity(windows.len());
    for chunk in idx.chunks(batch_size.max(1)) {
        let x = stack_windows(windows, chunk, len, ch)?;
        let p = model.predict_proba(&x)?;
        let k = *p.shape().last().unwrap();
        for row in p.data().chunks(k) {
            let best = row
                .iter()
                .enumerate()
                .fold(0, |best, (i, &v)| if v > row[best] { i } else { best });
            out.push(best);
        }
    }
    Ok(out)
}
