//! Smoothing, downsampling, slicing and scaling of raw recordings.

use serde::{Deserialize, Serialize};

use super::synth::{Record, SLICE_SAMPLES};
use crate::anomaly::WindowSet;
use crate::digraph::{attach_features, build_series_digraph, DigraphVariant, FeaturedDigraph, TimeDigraphSpec, TimeSeries};
use crate::error::{Error, Result};

pub const SMOOTH_WINDOW: usize = 20;
pub const DOWNSAMPLE: usize = 4;
/// Sample rate after downsampling.
pub const RATE_HZ: usize = 128;
pub const SUPERVISED_WINDOW: usize = 5 * RATE_HZ;
pub const UNSUPERVISED_WINDOW: usize = RATE_HZ;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    /// One 640-sample window per 5-second slice.
    Supervised,
    /// Five 128-sample windows per 5-second slice.
    Unsupervised,
}

impl Task {
    pub fn window_len(self) -> usize {
        match self {
            Task::Supervised => SUPERVISED_WINDOW,
            Task::Unsupervised => UNSUPERVISED_WINDOW,
        }
    }
}

/// Centred moving average over `window` samples, offsets
/// `−window/2 .. window − window/2`, averaging only the samples inside
/// the signal at the edges.
pub fn moving_average(x: &[f64], window: usize) -> Vec<f64> {
    if window <= 1 || x.is_empty() {
        return x.to_vec();
    }
    let n = x.len();
    let mut prefix = vec![0.0; n + 1];
    for (i, v) in x.iter().enumerate() {
        prefix[i + 1] = prefix[i] + v;
    }
    let back = window / 2;
    let fwd = window - back;
    (0..n)
        .map(|i| {
            let lo = i.saturating_sub(back);
            let hi = (i + fwd).min(n);
            (prefix[hi] - prefix[lo]) / (hi - lo) as f64
        })
        .collect()
}

/// Every `ratio`-th sample, starting with the first.
pub fn downsample(x: &[f64], ratio: usize) -> Vec<f64> {
    x.iter().step_by(ratio.max(1)).copied().collect()
}

/// Scales to `[0, 1]`; a constant window becomes all zeros.
pub fn min_max_scale(x: &[f64]) -> Vec<f64> {
    let (lo, hi) = x.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
    let range = hi - lo;
    if range > 0.0 {
        x.iter().map(|v| (v - lo) / range).collect()
    } else {
        vec![0.0; x.len()]
    }
}

/// Scaled windows of one recording.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Preprocessed {
    pub recording_id: usize,
    pub windows: Vec<Vec<f64>>,
    /// Slice index (within the recording) of every window.
    pub slice_of: Vec<usize>,
    /// Binary label of every slice.
    pub labels: Vec<u8>,
}

/// Smooths, keeps every 4th sample, cuts windows and min-max scales each.
pub fn preprocess(record: &Record, task: Task) -> Result<Preprocessed> {
    if record.samples.len() < SLICE_SAMPLES || record.num_slices() == 0 {
        return Err(Error::InvalidArgument(format!(
            "recording {} is shorter than one slice",
            record.recording_id
        )));
    }
    let smooth = moving_average(&record.samples, SMOOTH_WINDOW);
    let low = downsample(&smooth, DOWNSAMPLE);
    let w = task.window_len();
    let per_slice = SUPERVISED_WINDOW / w;
    let mut windows = Vec::new();
    let mut slice_of = Vec::new();
    for s in 0..record.num_slices() {
        for k in 0..per_slice {
            let start = s * SUPERVISED_WINDOW + k * w;
            windows.push(min_max_scale(&low[start..start + w]));
            slice_of.push(s);
        }
    }
    Ok(Preprocessed {
        recording_id: record.recording_id,
        windows,
        slice_of,
        labels: record.binary_labels(),
    })
}

/// Series digraph of a window with its samples as node features.
pub fn window_graph(window: &[f64], spec: &TimeDigraphSpec) -> Result<FeaturedDigraph> {
    let ts = TimeSeries::univariate(window.to_vec(), RATE_HZ as f64)?;
    let g = build_series_digraph(window.len(), spec)?;
    attach_features(&ts, &g, DigraphVariant::Series)
}

/// Preprocesses the records and concatenates them into one window set,
/// numbering slices consecutively in record order.
pub fn build_window_set(records: &[Record], task: Task) -> Result<WindowSet> {
    let mut set = WindowSet {
        labels: Some(Vec::new()),
        ..Default::default()
    };
    for r in records {
        let p = preprocess(r, task)?;
        let offset = set.num_slices;
        set.windows.extend(p.windows);
        set.slice_of.extend(p.slice_of.iter().map(|s| s + offset));
        set.num_slices += p.labels.len();
        set.labels.as_mut().expect("labels set above").extend(p.labels);
    }
    Ok(set)
}
