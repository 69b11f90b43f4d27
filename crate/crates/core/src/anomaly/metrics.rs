//! Precision, recall and accuracy under both positive-class conventions.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinaryScores {
    pub precision: f64,
    pub recall: f64,
    pub accuracy: f64,
    /// No predicted positives: precision reported as 0.
    pub precision_undefined: bool,
    /// No actual positives: recall reported as 0.
    pub recall_undefined: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub positive_1: BinaryScores,
    pub positive_0: BinaryScores,
}

impl Metrics {
    pub fn accuracy(&self) -> f64 {
        self.positive_1.accuracy
    }
}

fn scores(pred: &[u8], truth: &[u8], positive: u8) -> BinaryScores {
    let (mut tp, mut fp, mut fneg, mut correct) = (0usize, 0usize, 0usize, 0usize);
    for (&p, &t) in pred.iter().zip(truth) {
        match (p == positive, t == positive) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fneg += 1,
            (false, false) => {}
        }
        correct += usize::from(p == t);
    }
    let ratio = |num: usize, den: usize| if den == 0 { (0.0, true) } else { (num as f64 / den as f64, false) };
    let (precision, precision_undefined) = ratio(tp, tp + fp);
    let (recall, recall_undefined) = ratio(tp, tp + fneg);
    BinaryScores {
        precision,
        recall,
        accuracy: correct as f64 / pred.len() as f64,
        precision_undefined,
        recall_undefined,
    }
}

/// Scores binary predictions against ground truth (labels 0 and 1).
pub fn evaluate_binary(pred: &[u8], truth: &[u8]) -> Result<Metrics> {
    if pred.len() != truth.len() {
        return Err(Error::Shape(format!("{} predictions for {} labels", pred.len(), truth.len())));
    }
    if pred.is_empty() {
        return Err(Error::Empty("predictions".into()));
    }
    if pred.iter().chain(truth).any(|&l| l > 1) {
        return Err(Error::InvalidArgument("labels must be 0 or 1".into()));
    }
    Ok(Metrics {
        positive_1: scores(pred, truth, 1),
        positive_0: scores(pred, truth, 0),
    })
}
