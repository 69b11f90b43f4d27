//! Subcommand implementations. Each prints a JSON summary on stdout.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;
use tgraph::anomaly::{
    build_error_sets, evaluate_binary, label_test, Approach, Clusterer, MahalanobisConfig, Metrics, PipelineConfig,
    TwoStageConfig, WindowSet,
};
use tgraph::data::{
    build_window_set, emit_report, split_by_recording, synth_ecg, Aggregation, Record, SynthConfig, TrimBy,
    DEFAULT_WEIGHTS,
};
use tgraph::gconv::lemma1_check;
use tgraph::models::{
    check_param_gradients, load_model, predict_classes, preset, save_model, train, Model, ModelConfig, TrainConfig,
};
use tgraph::numerics::{Mode, Tensor};

use crate::dataset::{self, Prepared, PreparedSets};
use crate::RunConfig;

const REFINEMENT_FILE: &str = "refinement.json";

fn print(value: &serde_json::Value) {
    println!("{value}");
}

pub fn generate(cfg: &RunConfig) -> Result<()> {
    let out = cfg.require_out()?;
    let synth = SynthConfig::new(
        cfg.recordings.unwrap_or(20),
        cfg.seconds.unwrap_or(500),
        cfg.anomaly_rate.unwrap_or(0.18),
        cfg.seed(),
    );
    let records = synth_ecg(&synth)?;
    dataset::write_records(&out, &records)?;
    let slices: usize = records.iter().map(Record::num_slices).sum();
    let bad: usize = records.iter().map(|r| r.binary_labels().iter().filter(|&&l| l == 0).count()).sum();
    print(&json!({ "recordings": records.len(), "slices": slices, "anomalous_slices": bad, "out": out }));
    Ok(())
}

pub fn preprocess(cfg: &RunConfig) -> Result<()> {
    let (data, out) = (cfg.require_data()?, cfg.require_out()?);
    let Some(task) = cfg.task else { bail!("--task is required") };
    let records = dataset::read_records(&data)?;
    let by_id: BTreeMap<usize, &Record> = records.iter().map(|r| (r.recording_id, r)).collect();
    let sizes: Vec<(usize, usize)> = records.iter().map(|r| (r.recording_id, r.num_slices())).collect();
    let split_seed = cfg.split_seed.unwrap_or(cfg.seed());
    let split = split_by_recording(&sizes, DEFAULT_WEIGHTS, split_seed)?;
    let build = |ids: &[usize]| {
        let part: Vec<Record> = ids.iter().map(|id| by_id[id].clone()).collect();
        build_window_set(&part, task)
    };
    let sets = PreparedSets {
        train: build(&split.train)?,
        valid: build(&split.valid)?,
        test: build(&split.test)?,
        meta: Prepared {
            task,
            split_seed,
            split,
        },
    };
    dataset::write_prepared(&out, &sets)?;
    let part = |s: &WindowSet| json!({ "slices": s.num_slices, "windows": s.windows.len(), "anomaly_rate": s.anomaly_rate() });
    print(&json!({
        "task": task,
        "train": part(&sets.train),
        "valid": part(&sets.valid),
        "test": part(&sets.test),
    }));
    Ok(())
}

fn model_config(cfg: &RunConfig, autoencoder: bool, window_len: usize) -> Result<ModelConfig> {
    let name = cfg.require_model()?;
    let mc = preset(&name)?;
    if mc.is_autoencoder() != autoencoder {
        bail!("{name} is {}an autoencoder", if autoencoder { "not " } else { "" });
    }
    if mc.window_len != window_len {
        bail!("{name} takes windows of {} samples, the dataset has {window_len}", mc.window_len);
    }
    Ok(mc)
}

fn window_len(set: &WindowSet) -> Result<usize> {
    set.windows.first().map(Vec::len).context("the training set is empty")
}

fn train_config(cfg: &RunConfig, base: TrainConfig) -> TrainConfig {
    TrainConfig {
        epochs: cfg.epochs.unwrap_or(base.epochs),
        batch_size: cfg.batch_size.unwrap_or(base.batch_size),
        lr: cfg.lr.unwrap_or(base.lr),
        seed: cfg.seed(),
    }
}

/// Per-window class labels of a supervised set.
fn window_labels(set: &WindowSet) -> Result<Vec<u8>> {
    let labels = set.labels.as_ref().context("the dataset has no labels")?;
    Ok(set.slice_of.iter().map(|&s| labels[s]).collect())
}

fn classifier_metrics(model: &Model, set: &WindowSet) -> Result<Metrics> {
    let pred: Vec<u8> = predict_classes(model, &set.windows, 64)?.into_iter().map(|c| c as u8).collect();
    Ok(evaluate_binary(&pred, &window_labels(set)?)?)
}

pub fn train_classifier(cfg: &RunConfig) -> Result<()> {
    let (data, out) = (cfg.require_data()?, cfg.require_out()?);
    let sets = dataset::read_prepared(&data)?;
    let mc = model_config(cfg, false, window_len(&sets.train)?)?;
    let tc = train_config(cfg, TrainConfig::default());
    let mut model = Model::new(mc, cfg.seed())?;
    let labels: Vec<usize> = window_labels(&sets.train)?.into_iter().map(usize::from).collect();
    let history = train(&mut model, &sets.train.windows, Some(&labels), &tc)?;
    save_model(&model, &out)?;
    dataset::write_json(&out.join("history.json"), &history)?;
    let metrics = classifier_metrics(&model, &sets.test)?;
    dataset::write_json(&out.join("metrics.json"), &metrics)?;
    print(&json!({
        "model": cfg.model,
        "params": model.num_params(),
        "final_loss": history.epoch_loss.last(),
        "test_accuracy": metrics.accuracy(),
        "out": out,
    }));
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct RefinementFile {
    /// Training slices kept for the second stage.
    kept: Vec<usize>,
    slice_loss: Vec<f64>,
    anomaly_rate_before: Option<f64>,
    anomaly_rate_after: Option<f64>,
}

pub fn train_ae(cfg: &RunConfig) -> Result<()> {
    let (data, out) = (cfg.require_data()?, cfg.require_out()?);
    let sets = dataset::read_prepared(&data)?;
    let mc = model_config(cfg, true, window_len(&sets.train)?)?;
    let base = TwoStageConfig::default();
    let two = TwoStageConfig {
        first: train_config(cfg, base.first),
        second: TrainConfig {
            epochs: cfg.second_epochs.unwrap_or(base.second.epochs),
            ..train_config(cfg, base.second)
        },
        discard_fraction: cfg.discard_fraction.unwrap_or(base.discard_fraction),
    };
    let outcome = tgraph::anomaly::train_two_stage(&mc, &sets.train, &two, cfg.seed())?;
    save_model(&outcome.model, &out)?;
    let refinement = RefinementFile {
        kept: outcome.refinement.kept.clone(),
        slice_loss: outcome.refinement.slice_loss.clone(),
        anomaly_rate_before: sets.train.anomaly_rate(),
        anomaly_rate_after: outcome.refinement.set.anomaly_rate(),
    };
    dataset::write_json(&out.join(REFINEMENT_FILE), &refinement)?;
    dataset::write_json(&out.join("history.json"), &json!({ "first": outcome.first, "second": outcome.second }))?;
    print(&json!({
        "model": cfg.model,
        "kept_slices": refinement.kept.len(),
        "anomaly_rate_before": refinement.anomaly_rate_before,
        "anomaly_rate_after": refinement.anomaly_rate_after,
        "final_loss": outcome.second.epoch_loss.last(),
        "out": out,
    }));
    Ok(())
}

pub fn detect(cfg: &RunConfig) -> Result<()> {
    let (data, out, model_dir) = (cfg.require_data()?, cfg.require_out()?, cfg.require_model_dir()?);
    let sets = dataset::read_prepared(&data)?;
    let model = load_model(&model_dir).with_context(|| format!("loading a model from {}", model_dir.display()))?;
    if !model.is_autoencoder() {
        bail!("{} does not hold an autoencoder", model_dir.display());
    }
    let refinement = model_dir.join(REFINEMENT_FILE);
    let train_set = if refinement.exists() {
        let r: RefinementFile = dataset::read_json(&refinement)?;
        if r.kept.iter().any(|&s| s >= sets.train.num_slices) {
            bail!("{} does not match the training set", refinement.display());
        }
        sets.train.select_slices(&r.kept)
    } else {
        sets.train.clone()
    };
    let pc = PipelineConfig {
        approach: cfg.approach.unwrap_or(Approach::A),
        clusterer: cfg.clusterer.unwrap_or(Clusterer::Kmeans),
        seed: cfg.seed(),
        ..Default::default()
    };
    let errors = build_error_sets(&model, &train_set, &sets.valid, &sets.test, &MahalanobisConfig::default(), pc.batch_size)?;
    let output = label_test(&errors, &pc)?;
    fs::create_dir_all(&out)?;
    dataset::write_errors(&out.join("errors_valid.csv"), &errors.valid, Some(&output.valid_labels))?;
    dataset::write_errors(&out.join("errors_test.csv"), &errors.test, Some(&output.test_labels))?;
    dataset::write_json(
        &out.join("detect.json"),
        &json!({ "config": pc, "valid_normalizer": output.valid_normalizer, "svm": output.svm }),
    )?;
    if let Some(m) = &output.metrics {
        dataset::write_json(&out.join("metrics.json"), m)?;
    }
    print(&json!({
        "approach": pc.approach,
        "clusterer": pc.clusterer,
        "test_points": output.test.len(),
        "predicted_bad": output.test_labels.iter().filter(|&&l| l == 0).count(),
        "metrics": output.metrics,
        "out": out,
    }));
    Ok(())
}

fn emit_metrics(cfg: &RunConfig, metrics: &Metrics) -> Result<()> {
    if let Some(out) = &cfg.out {
        fs::create_dir_all(out)?;
        dataset::write_json(&out.join("metrics.json"), metrics)?;
    }
    print(&serde_json::to_value(metrics)?);
    Ok(())
}

pub fn evaluate_errors(cfg: &RunConfig, path: &Path) -> Result<()> {
    let rows = dataset::read_errors(path)?;
    let mut pred = Vec::with_capacity(rows.len());
    let mut truth = Vec::with_capacity(rows.len());
    for r in &rows {
        match (r.pred_label, r.true_label) {
            (Some(p), Some(t)) => {
                pred.push(p);
                truth.push(t);
            }
            _ => bail!("window {} lacks a true or predicted label", r.window_id),
        }
    }
    emit_metrics(cfg, &evaluate_binary(&pred, &truth)?)
}

pub fn evaluate_classifier(cfg: &RunConfig) -> Result<()> {
    let (data, model_dir) = (cfg.require_data()?, cfg.require_model_dir()?);
    let sets = dataset::read_prepared(&data)?;
    let model = load_model(&model_dir).with_context(|| format!("loading a model from {}", model_dir.display()))?;
    if model.is_autoencoder() {
        bail!("{} holds an autoencoder; use detect", model_dir.display());
    }
    emit_metrics(cfg, &classifier_metrics(&model, &sets.test)?)
}

/// Random kernels of length ≤ 8, every other one with taps interleaved with
/// zeros, against signals of length ≤ 64.
pub fn verify_lemma1(cfg: &RunConfig, cases: usize, tol: f64) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed());
    let mut worst = 0.0f64;
    for case in 0..cases {
        let k: Vec<f64> = if case % 2 == 0 {
            let r = rng.gen_range(1..=8);
            (0..r).map(|_| rng.gen_range(-1.0..1.0)).collect()
        } else {
            let q = rng.gen_range(2..=4);
            let taps = rng.gen_range(2..=(7 / q + 1));
            let mut k = vec![0.0; (taps - 1) * q + 1];
            for t in 0..taps {
                k[t * q] = rng.gen_range(-1.0..1.0);
            }
            k
        };
        let len = rng.gen_range(k.len()..=64);
        let x: Vec<f64> = (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect();
        worst = worst.max(lemma1_check(&k, &x)?);
    }
    print(&json!({ "cases": cases, "max_abs_diff": worst, "tol": tol, "pass": worst <= tol }));
    if worst > tol {
        bail!("max difference {worst:e} exceeds {tol:e}");
    }
    Ok(())
}

pub fn gradcheck(cfg: &RunConfig, per_param: usize, tol: f64) -> Result<()> {
    let name = cfg.require_model()?;
    let mc = preset(&name)?;
    let mut model = Model::new(mc.clone(), cfg.seed())?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed().wrapping_add(1));
    let x = Tensor::new(
        vec![2, mc.window_len, 1],
        (0..2 * mc.window_len).map(|_| rng.gen_range(-1.0..1.0)).collect(),
    )?;
    let labels = (!model.is_autoencoder()).then_some(&[0usize, 1][..]);
    let report = check_param_gradients(&mut model, &x, labels, Mode::Train, per_param, 1e-6, cfg.seed())?;
    let pass = report.max_rel_error <= tol && report.dead.is_empty();
    print(&json!({ "model": name, "report": report, "tol": tol, "pass": pass }));
    if !pass {
        bail!("gradient check failed: max relative error {:e}, {} dead parameters", report.max_rel_error, report.dead.len());
    }
    Ok(())
}

pub fn report(cfg: &RunConfig, runs: &[std::path::PathBuf], title: &str, aggregation: Aggregation, trim_by: TrimBy) -> Result<()> {
    let metrics = runs.iter().map(|p| dataset::read_json::<Metrics>(p)).collect::<Result<Vec<_>>>()?;
    let report = emit_report(title, &metrics, aggregation, trim_by)?;
    let text = report.render();
    if let Some(out) = &cfg.out {
        fs::create_dir_all(out)?;
        dataset::write_json(&out.join("report.json"), &report)?;
        fs::write(out.join("report.txt"), &text)?;
    }
    print!("{text}");
    Ok(())
}
