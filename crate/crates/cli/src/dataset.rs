//! On-disk layout of raw datasets, preprocessed splits and errors sets.
//!
//! A raw dataset directory holds one `recording_<id>.csv` per recording
//! (`t,value`, `t` in seconds at 512 Hz) and a `labels.csv` sidecar
//! (`recording_id,slice_index,label`) with the 1/2/3 quality grade of every
//! 5-second slice.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use tgraph::anomaly::{ErrorPoint, WindowSet};
use tgraph::data::{Record, Split, Task, RAW_RATE_HZ};

pub const LABELS_FILE: &str = "labels.csv";
const PARTS: [&str; 3] = ["train", "valid", "test"];

pub fn recording_path(dir: &Path, id: usize) -> PathBuf {
    dir.join(format!("recording_{id}.csv"))
}

#[derive(Debug, Serialize, Deserialize)]
struct SampleRow {
    t: f64,
    value: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct LabelRow {
    recording_id: usize,
    slice_index: usize,
    label: u8,
}

pub fn write_records(dir: &Path, records: &[Record]) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut labels = csv::Writer::from_path(dir.join(LABELS_FILE))?;
    for r in records {
        let mut w = csv::Writer::from_path(recording_path(dir, r.recording_id))?;
        for (i, &value) in r.samples.iter().enumerate() {
            w.serialize(SampleRow {
                t: i as f64 / RAW_RATE_HZ as f64,
                value,
            })?;
        }
        w.flush()?;
        for (slice_index, &label) in r.grades.iter().enumerate() {
            labels.serialize(LabelRow {
                recording_id: r.recording_id,
                slice_index,
                label,
            })?;
        }
    }
    labels.flush()?;
    Ok(())
}

/// Reads every recording listed in the labels sidecar, in id order.
pub fn read_records(dir: &Path) -> Result<Vec<Record>> {
    let path = dir.join(LABELS_FILE);
    let mut grades: BTreeMap<usize, BTreeMap<usize, u8>> = BTreeMap::new();
    for row in csv::Reader::from_path(&path).with_context(|| format!("reading {}", path.display()))?.deserialize() {
        let row: LabelRow = row.with_context(|| format!("parsing {}", path.display()))?;
        if grades.entry(row.recording_id).or_default().insert(row.slice_index, row.label).is_some() {
            bail!("slice {} of recording {} labelled twice", row.slice_index, row.recording_id);
        }
    }
    if grades.is_empty() {
        bail!("{} lists no slices", path.display());
    }
    let mut out = Vec::with_capacity(grades.len());
    for (id, slices) in grades {
        if slices.keys().copied().ne(0..slices.len()) {
            bail!("recording {id}: slice indices are not 0..{}", slices.len());
        }
        let rpath = recording_path(dir, id);
        let samples = csv::Reader::from_path(&rpath)
            .with_context(|| format!("reading {}", rpath.display()))?
            .deserialize()
            .map(|r| r.map(|s: SampleRow| s.value))
            .collect::<Result<Vec<f64>, _>>()
            .with_context(|| format!("parsing {}", rpath.display()))?;
        out.push(Record::new(id, samples, slices.into_values().collect())?);
    }
    Ok(out)
}

/// Preprocessed dataset: the split and one window set per part.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Prepared {
    pub task: Task,
    pub split_seed: u64,
    pub split: Split,
}

pub struct PreparedSets {
    pub meta: Prepared,
    pub train: WindowSet,
    pub valid: WindowSet,
    pub test: WindowSet,
}

pub fn write_prepared(dir: &Path, sets: &PreparedSets) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_json(&dir.join("split.json"), &sets.meta)?;
    for (name, set) in PARTS.iter().zip([&sets.train, &sets.valid, &sets.test]) {
        fs::write(dir.join(format!("{name}.json")), serde_json::to_vec(set)?)?;
    }
    Ok(())
}

pub fn read_prepared(dir: &Path) -> Result<PreparedSets> {
    let meta: Prepared = read_json(&dir.join("split.json"))?;
    let [train, valid, test] = PARTS.map(|name| read_json::<WindowSet>(&dir.join(format!("{name}.json"))));
    let sets = PreparedSets {
        meta,
        train: train?,
        valid: valid?,
        test: test?,
    };
    for set in [&sets.train, &sets.valid, &sets.test] {
        set.validate()?;
    }
    Ok(sets)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)?).with_context(|| format!("writing {}", path.display()))
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorRow {
    pub window_id: usize,
    pub rmse: f64,
    pub mahalanobis: f64,
    pub true_label: Option<u8>,
    pub pred_label: Option<u8>,
}

pub fn write_errors(path: &Path, points: &[ErrorPoint], pred: Option<&[u8]>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for (i, p) in points.iter().enumerate() {
        w.serialize(ErrorRow {
            window_id: p.window_id,
            rmse: p.rmse,
            mahalanobis: p.mahalanobis,
            true_label: p.true_label,
            pred_label: pred.map(|l| l[i]),
        })?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_errors(path: &Path) -> Result<Vec<ErrorRow>> {
    csv::Reader::from_path(path)
        .with_context(|| format!("reading {}", path.display()))?
        .deserialize()
        .collect::<Result<Vec<ErrorRow>, _>>()
        .with_context(|| format!("parsing {}", path.display()))
}
