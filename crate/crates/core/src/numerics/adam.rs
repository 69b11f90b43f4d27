//! Adam with bias correction.

use serde::{Deserialize, Serialize};

use super::params::ParamStore;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    pub first: Vec<Vec<f64>>,
    pub second: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(config: AdamConfig, shapes: impl IntoIterator<Item = usize>) -> Self {
        let (first, second) = shapes
            .into_iter()
            .map(|n| (vec![0.0; n], vec![0.0; n]))
            .unzip();
        Self {
            config,
            step: 0,
            first,
            second,
        }
    }

    /// State sized for every entry of `store`; buffers get empty slots.
    pub fn for_store(config: AdamConfig, store: &ParamStore) -> Self {
        Self::new(
            config,
            store
                .entries()
                .iter()
                .map(|e| if e.trainable { e.value.len() } else { 0 }),
        )
    }

    /// One update of `params` in place using `grads`.
    pub fn step(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]]) -> Result<()> {
        if params.len() != self.first.len() || grads.len() != self.first.len() {
            return Err(Error::Shape(format!(
                "adam state tracks {} tensors, got {} params and {} grads",
                self.first.len(),
                params.len(),
                grads.len()
            )));
        }
        for ((p, g), m) in params.iter().zip(grads).zip(&self.first) {
            if p.len() != m.len() || g.len() != m.len() {
                return Err(Error::Shape("adam parameter/gradient/moment length mismatch".into()));
            }
        }
        self.step += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for (k, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let (m, v) = (&mut self.first[k], &mut self.second[k]);
            for i in 0..p.len() {
                m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                p[i] -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }

    /// Updates every trainable entry of `store` from its accumulated gradient.
    pub fn step_store(&mut self, store: &mut ParamStore) -> Result<()> {
        let trainable: Vec<bool> = store.entries().iter().map(|e| e.trainable).collect();
        let entries = store.entries_mut();
        let mut params: Vec<&mut [f64]> = Vec::with_capacity(entries.len());
        let mut grads: Vec<&[f64]> = Vec::with_capacity(entries.len());
        for (e, &t) in entries.iter_mut().zip(&trainable) {
            if t {
                params.push(e.value.data_mut());
                grads.push(&e.grad);
            } else {
                params.push(&mut []);
                grads.push(&[]);
            }
        }
        self.step(&mut params, &grads)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let mut st = AdamState::new(AdamConfig::default(), [3]);
        st.first[0] = vec![0.5, -0.5, 1.0];
        let mut p = vec![1.0, 2.0, 3.0];
        st.step(&mut [&mut p[..]], &[&[0.0; 3][..]]).unwrap();
        // Moments decay while the bias-corrected step stays nonzero, so only
        // check that the raw moments shrank.
        assert!(st.first[0].iter().all(|m| m.abs() < 1.0));
        let mut st = AdamState::new(AdamConfig::default(), [3]);
        let before = p.clone();
        for _ in 0..5 {
            st.step(&mut [&mut p[..]], &[&[0.0; 3][..]]).unwrap();
        }
        assert_eq!(p, before);
    }

    #[test]
    fn single_step_moves_by_lr_times_normalized_gradient() {
        let cfg = AdamConfig::default();
        for g in [0.3, -2.0, 1e-9] {
            let mut st = AdamState::new(cfg, [1]);
            let mut p = vec![0.0];
            st.step(&mut [&mut p[..]], &[&[g][..]]).unwrap();
            // m̂ = g, v̂ = g² after bias correction
            let expected = -cfg.lr * g / (g.abs() + cfg.eps);
            assert!((p[0] - expected).abs() < 1e-15, "{} vs {expected}", p[0]);
        }
    }

    #[test]
    fn constant_gradient_displacement_tends_to_lr() {
        let cfg = AdamConfig::default();
        let mut st = AdamState::new(cfg, [1]);
        let mut p = vec![0.0];
        let mut last = 0.0;
        for _ in 0..5000 {
            last = p[0];
            st.step(&mut [&mut p[..]], &[&[0.7][..]]).unwrap();
        }
        assert!(((last - p[0]) - cfg.lr).abs() < 1e-9);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut st = AdamState::new(AdamConfig::default(), [2]);
        let mut p = vec![0.0; 3];
        assert!(st.step(&mut [&mut p[..]], &[&[0.0; 3][..]]).is_err());
    }
}
