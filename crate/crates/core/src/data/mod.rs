//! Synthetic ECG-like data, preprocessing into model windows,
//! recording-aware splits and run reports.

mod preprocess;
mod report;
mod split;
mod synth;

pub use preprocess::{
    build_window_set, downsample, min_max_scale, moving_average, preprocess, window_graph, Preprocessed, Task,
    DOWNSAMPLE, RATE_HZ, SMOOTH_WINDOW, SUPERVISED_WINDOW, UNSUPERVISED_WINDOW,
};
pub use report::{emit_report, Aggregation, BlockSummary, MeanStd, Report, TrimBy, STANDARD_RUNS};
pub use split::{split_by_recording, Split, DEFAULT_WEIGHTS};
pub use synth::{
    synth_ecg, AnomalyKind, Record, SynthConfig, GRADE_BAD, GRADE_GOOD, GRADE_MEDIUM, RAW_RATE_HZ, SLICE_SAMPLES,
    SLICE_SECONDS,
};
