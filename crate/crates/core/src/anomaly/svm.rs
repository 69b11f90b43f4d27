//! Soft-margin linear SVM on the two-dimensional errors space.

use serde::{Deserialize, Serialize};

use super::cluster::{LABEL_BAD, LABEL_GOOD};
use super::scores::ErrorPoint;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SvmConfig {
    /// Weight of the summed hinge loss against `½‖w‖²`.
    pub c: f64,
    pub steps: usize,
}

impl Default for SvmConfig {
    fn default() -> Self {
        Self { c: 1.0, steps: 10_000 }
    }
}

/// Decision function `w·x + b`; positive means label 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearSvm {
    pub w: [f64; 2],
    pub b: f64,
    /// Primal objective of the returned iterate.
    pub objective: f64,
}

impl LinearSvm {
    pub fn decision(&self, x: [f64; 2]) -> f64 {
        self.w[0] * x[0] + self.w[1] * x[1] + self.b
    }

    pub fn predict(&self, x: [f64; 2]) -> u8 {
        if self.decision(x) > 0.0 {
            LABEL_GOOD
        } else {
            LABEL_BAD
        }
    }
}

fn sign(label: u8) -> f64 {
    if label == LABEL_GOOD {
        1.0
    } else {
        -1.0
    }
}

/// `½‖w‖² + C Σ max(0, 1 − yᵢ(w·xᵢ + b))`.
pub fn svm_objective(x: &[[f64; 2]], y: &[u8], w: [f64; 2], b: f64, c: f64) -> f64 {
    let hinge: f64 = x
        .iter()
        .zip(y)
        .map(|(p, &l)| (1.0 - sign(l) * (w[0] * p[0] + w[1] * p[1] + b)).max(0.0))
        .sum();
    0.5 * (w[0] * w[0] + w[1] * w[1]) + c * hinge
}

/// Full-batch subgradient descent on the primal with step `1 / (λ t)`,
/// `λ = 1 / (C n)`, on the objective scaled by `1 / (C n)`. The best
/// iterate seen is returned, so the result is deterministic.
pub fn svm_fit(x: &[[f64; 2]], y: &[u8], cfg: &SvmConfig) -> Result<LinearSvm> {
    if x.len() != y.len() {
        return Err(Error::Shape(format!("{} points for {} labels", x.len(), y.len())));
    }
    if !(cfg.c > 0.0) || cfg.steps == 0 {
        return Err(Error::InvalidArgument("C and the step count must be positive".into()));
    }
    if !y.contains(&LABEL_GOOD) || !y.contains(&LABEL_BAD) {
        return Err(Error::Degenerate("SVM training set has a single class".into()));
    }
    let n = x.len() as f64;
    let lambda = 1.0 / (cfg.c * n);
    let (mut w, mut b) = ([0.0; 2], 0.0);
    let mut best = LinearSvm {
        w,
        b,
        objective: svm_objective(x, y, w, b, cfg.c),
    };
    for t in 1..=cfg.steps {
        let eta = 1.0 / (lambda * t as f64);
        // subgradient of λ/2 ‖w‖² + mean hinge
        let mut gw = [lambda * w[0], lambda * w[1]];
        let mut gb = 0.0;
        for (p, &l) in x.iter().zip(y) {
            let s = sign(l);
            if s * (w[0] * p[0] + w[1] * p[1] + b) < 1.0 {
                gw[0] -= s * p[0] / n;
                gw[1] -= s * p[1] / n;
                gb -= s / n;
            }
        }
        w[0] -= eta * gw[0];
        w[1] -= eta * gw[1];
        b -= eta * gb;
        let obj = svm_objective(x, y, w, b, cfg.c);
        if obj < best.objective {
            best = LinearSvm { w, b, objective: obj };
        }
    }
    Ok(best)
}

/// Trains on labelled errors points and predicts the labels of `test`.
pub fn svm_fit_predict(train: &[ErrorPoint], labels: &[u8], test: &[ErrorPoint], cfg: &SvmConfig) -> Result<(LinearSvm, Vec<u8>)> {
    let x: Vec<[f64; 2]> = train.iter().map(ErrorPoint::coords).collect();
    let svm = svm_fit(&x, labels, cfg)?;
    let pred = test.iter().map(|p| svm.predict(p.coords())).collect();
    Ok((svm, pred))
}
