//! Aggregation of repeated runs into mean ± std tables.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::anomaly::{BinaryScores, Metrics};
use crate::error::{Error, Result};

/// Number of runs the drop-extremes rule is meant for.
pub const STANDARD_RUNS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    /// Drop extremes for exactly [`STANDARD_RUNS`] runs, otherwise keep
    /// every run and flag the report.
    Auto,
    /// Always drop the best and worst run (needs at least 3).
    DropExtremes,
    All,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrimBy {
    /// Drop the runs with the best and worst accuracy from every metric.
    Accuracy,
    /// Drop the best and worst value of each metric separately.
    EachMetric,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        // shifted by the first value, so identical runs give it back exactly
        let v0 = values[0];
        let mean = v0 + values.iter().map(|v| v - v0).sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Self { mean, std: var.sqrt() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlockSummary {
    pub precision: MeanStd,
    pub recall: MeanStd,
    pub accuracy: MeanStd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub title: String,
    pub runs: usize,
    /// Runs entering each mean.
    pub used: usize,
    pub dropped_extremes: bool,
    pub trim_by: TrimBy,
    /// Set when the run count is not the standard one.
    pub nonstandard: bool,
    pub positive_1: BlockSummary,
    pub positive_0: BlockSummary,
}

/// Indices of the runs without the best and worst by `key` (first
/// occurrence on ties).
fn middle(key: &[f64]) -> Vec<usize> {
    let argmax = (0..key.len()).fold(0, |b, i| if key[i] > key[b] { i } else { b });
    let argmin = (0..key.len()).fold(0, |b, i| if key[i] < key[b] { i } else { b });
    let drop_min = if argmin == argmax { (0..key.len()).find(|&i| i != argmax).expect("≥ 2 runs") } else { argmin };
    (0..key.len()).filter(|&i| i != argmax && i != drop_min).collect()
}

fn summarize(blocks: &[BinaryScores], accuracy_keep: Option<&[usize]>, trim: bool) -> BlockSummary {
    let stat = |f: fn(&BinaryScores) -> f64| {
        let v: Vec<f64> = blocks.iter().map(f).collect();
        let keep: Vec<usize> = match (trim, accuracy_keep) {
            (false, _) => (0..v.len()).collect(),
            (true, Some(k)) => k.to_vec(),
            (true, None) => middle(&v),
        };
        MeanStd::of(&keep.iter().map(|&i| v[i]).collect::<Vec<f64>>())
    };
    BlockSummary {
        precision: stat(|b| b.precision),
        recall: stat(|b| b.recall),
        accuracy: stat(|b| b.accuracy),
    }
}

/// Aggregates per-run metrics into a report.
pub fn emit_report(title: &str, runs: &[Metrics], aggregation: Aggregation, trim_by: TrimBy) -> Result<Report> {
    if runs.is_empty() {
        return Err(Error::Empty("runs".into()));
    }
    let nonstandard = runs.len() != STANDARD_RUNS;
    let trim = match aggregation {
        Aggregation::Auto => !nonstandard,
        Aggregation::DropExtremes => {
            if runs.len() < 3 {
                return Err(Error::InvalidArgument(format!("{} runs; dropping extremes needs 3", runs.len())));
            }
            true
        }
        Aggregation::All => false,
    };
    if nonstandard && aggregation == Aggregation::Auto {
        log::warn!("{} runs instead of {STANDARD_RUNS}: aggregating all of them", runs.len());
    }
    let acc: Vec<f64> = runs.iter().map(Metrics::accuracy).collect();
    let keep = (trim_by == TrimBy::Accuracy).then(|| middle(&acc));
    let p1: Vec<BinaryScores> = runs.iter().map(|m| m.positive_1).collect();
    let p0: Vec<BinaryScores> = runs.iter().map(|m| m.positive_0).collect();
    Ok(Report {
        title: title.to_string(),
        runs: runs.len(),
        used: if trim { runs.len() - 2 } else { runs.len() },
        dropped_extremes: trim,
        trim_by,
        nonstandard,
        positive_1: summarize(&p1, keep.as_deref(), trim),
        positive_0: summarize(&p0, keep.as_deref(), trim),
    })
}

impl Report {
    /// Plain-text table with one block per positive-class convention.
    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{}", self.title);
        let _ = writeln!(
            s,
            "runs: {} (aggregated: {}{})",
            self.runs,
            self.used,
            if self.dropped_extremes { ", best and worst dropped" } else { "" }
        );
        for (name, b) in [("Positive class = label 1", &self.positive_1), ("Positive class = label 0", &self.positive_0)] {
            let _ = writeln!(s, "{name}");
            let _ = writeln!(s, "{:<18}{:<18}{:<18}", "Precision", "Recall", "Accuracy");
            let cell = |m: &MeanStd| format!("{:.3} ± {:.3}", m.mean, m.std);
            let _ = writeln!(s, "{:<18}{:<18}{:<18}", cell(&b.precision), cell(&b.recall), cell(&b.accuracy));
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(acc: f64) -> Metrics {
        let b = BinaryScores {
            precision: acc,
            recall: acc,
            accuracy: acc,
            precision_undefined: false,
            recall_undefined: false,
        };
        Metrics {
            positive_1: b,
            positive_0: b,
        }
    }

    #[test]
    fn identical_runs() {
        let r = emit_report("x", &[run(0.9); 10], Aggregation::Auto, TrimBy::Accuracy).unwrap();
        assert_eq!(r.positive_1.accuracy, MeanStd { mean: 0.9, std: 0.0 });
        assert_eq!(r.used, 8);
        let text = r.render();
        assert!(text.contains("Positive class = label 1") && text.contains("Positive class = label 0"));
    }

    #[test]
    fn middle_eight_of_ten() {
        let runs: Vec<Metrics> = (0..10).map(|i| run(0.90 + 0.01 * i as f64)).collect();
        for trim in [TrimBy::Accuracy, TrimBy::EachMetric] {
            let r = emit_report("x", &runs, Aggregation::Auto, trim).unwrap();
            assert!((r.positive_0.accuracy.mean - 0.945).abs() < 1e-12);
        }
    }

    #[test]
    fn counts_and_flags() {
        let r = emit_report("x", &[run(0.5), run(0.7)], Aggregation::Auto, TrimBy::Accuracy).unwrap();
        assert!(r.nonstandard && !r.dropped_extremes);
        assert_eq!(r.positive_1.accuracy.mean, 0.6);
        assert!(emit_report("x", &[run(0.5), run(0.7)], Aggregation::DropExtremes, TrimBy::Accuracy).is_err());
        assert!(emit_report("x", &[], Aggregation::All, TrimBy::Accuracy).is_err());
    }
}
