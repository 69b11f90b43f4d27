use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn tgraph(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tgraph")).args(args).output().expect("binary runs")
}

fn ok_json(args: &[&str]) -> Value {
    let out = tgraph(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8(out.stdout).unwrap();
    serde_json::from_str(stdout.lines().last().expect("a summary line")).unwrap()
}

fn error_json(args: &[&str]) -> Value {
    let out = tgraph(args);
    assert!(!out.status.success(), "{args:?} should fail");
    let stderr = String::from_utf8(out.stderr).unwrap();
    let line = stderr.lines().last().expect("an error line");
    serde_json::from_str(line).unwrap_or_else(|_| panic!("not JSON: {line}"))
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn generate_writes_recordings_and_labels() {
    let dir = tempfile::tempdir().unwrap();
    let raw = dir.path().join("raw");
    let s = ok_json(&["generate", "--recordings", "3", "--seconds", "20", "--seed", "5", "--out", p(&raw)]);
    assert_eq!(s["recordings"], 3);
    assert_eq!(s["slices"], 12);
    let labels = std::fs::read_to_string(raw.join("labels.csv")).unwrap();
    assert!(labels.starts_with("recording_id,slice_index,label\n"));
    assert_eq!(labels.lines().count(), 13);
    let rec = std::fs::read_to_string(raw.join("recording_2.csv")).unwrap();
    assert!(rec.starts_with("t,value\n"));
    assert_eq!(rec.lines().count(), 1 + 20 * 512);
    // same seed, same bytes
    let again = dir.path().join("again");
    ok_json(&["generate", "--recordings", "3", "--seconds", "20", "--seed", "5", "--out", p(&again)]);
    assert_eq!(rec, std::fs::read_to_string(again.join("recording_2.csv")).unwrap());
}

#[test]
fn unsupervised_pipeline_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let (raw, prep, ae, det) = (dir.path().join("raw"), dir.path().join("prep"), dir.path().join("ae"), dir.path().join("det"));
    ok_json(&["generate", "--recordings", "4", "--seconds", "60", "--anomaly-rate", "0.3", "--seed", "1", "--out", p(&raw)]);
    let s = ok_json(&["preprocess", "--data", p(&raw), "--task", "unsupervised", "--seed", "2", "--out", p(&prep)]);
    let total: u64 = ["train", "valid", "test"].iter().map(|k| s[k]["slices"].as_u64().unwrap()).sum();
    assert_eq!(total, 48);
    let t = ok_json(&[
        "train-ae", "--data", p(&prep), "--model", "TCNAE1", "--epochs", "1", "--second-epochs", "1", "--out", p(&ae),
    ]);
    assert!(t["kept_slices"].as_u64().unwrap() < s["train"]["slices"].as_u64().unwrap());
    let d = ok_json(&["detect", "--data", p(&prep), "--model-dir", p(&ae), "--approach", "a", "--out", p(&det)]);
    assert_eq!(d["clusterer"], "kmeans");
    let csv = std::fs::read_to_string(det.join("errors_test.csv")).unwrap();
    assert!(csv.starts_with("window_id,rmse,mahalanobis,true_label,pred_label\n"));
    assert_eq!(csv.lines().count() as u64, 1 + s["test"]["slices"].as_u64().unwrap());
    // evaluating the written CSV reproduces the detect metrics
    let m = ok_json(&["evaluate", "--errors", p(&det.join("errors_test.csv"))]);
    assert_eq!(m, d["metrics"]);
}

#[test]
fn classifier_train_and_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    let (raw, prep, cls) = (dir.path().join("raw"), dir.path().join("prep"), dir.path().join("cls"));
    ok_json(&["generate", "--recordings", "3", "--seconds", "30", "--seed", "4", "--out", p(&raw)]);
    ok_json(&["preprocess", "--data", p(&raw), "--task", "supervised", "--out", p(&prep)]);
    let t = ok_json(&["train-classifier", "--data", p(&prep), "--model", "TGraphClassifier", "--epochs", "1", "--out", p(&cls)]);
    assert_eq!(t["params"], 17106);
    let m = ok_json(&["evaluate", "--data", p(&prep), "--model-dir", p(&cls)]);
    assert_eq!(m["positive_1"]["accuracy"], t["test_accuracy"]);
    // a 128-sample autoencoder cannot train on 640-sample windows
    let e = error_json(&["train-ae", "--data", p(&prep), "--model", "TCNAE1", "--out", p(&dir.path().join("x"))]);
    assert!(e["message"].as_str().unwrap().contains("640"));
}

#[test]
fn config_file_supplies_defaults_and_flags_override() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.json");
    let out = dir.path().join("raw");
    std::fs::write(&cfg, format!(r#"{{"recordings": 3, "seconds": 10, "seed": 7, "out": "{}"}}"#, p(&out))).unwrap();
    let s = ok_json(&["generate", "--config", p(&cfg)]);
    assert_eq!(s["slices"], 6);
    let s = ok_json(&["generate", "--config", p(&cfg), "--seconds", "15"]);
    assert_eq!(s["slices"], 9);
    std::fs::write(&cfg, r#"{"recordings": 3, "colour": "blue"}"#).unwrap();
    assert_eq!(error_json(&["generate", "--config", p(&cfg)])["error"], "failed");
}

#[test]
fn verification_commands() {
    let l = ok_json(&["verify-lemma1", "--cases", "30", "--seed", "9"]);
    assert_eq!(l["pass"], true);
    let g = ok_json(&["gradcheck", "--model", "TCNAE1", "--per-param", "1"]);
    assert_eq!(g["pass"], true);
    assert!(g["report"]["max_rel_error"].as_f64().unwrap() <= 1e-5);
}

#[test]
fn report_drops_extremes_of_ten_runs() {
    let dir = tempfile::tempdir().unwrap();
    let mut files = Vec::new();
    for i in 0..10 {
        let acc = 0.90 + 0.01 * i as f64;
        let block = serde_json::json!({
            "precision": acc, "recall": acc, "accuracy": acc,
            "precision_undefined": false, "recall_undefined": false
        });
        let path = dir.path().join(format!("run{i}.json"));
        std::fs::write(&path, serde_json::json!({ "positive_1": block, "positive_0": block }).to_string()).unwrap();
        files.push(path);
    }
    let out = dir.path().join("report");
    let mut args = vec!["report", "--title", "Fixture", "--out", p(&out)];
    args.extend(files.iter().map(|f| p(f)));
    let o = tgraph(&args);
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.contains("Positive class = label 1") && text.contains("Positive class = label 0"));
    let report: Value = serde_json::from_str(&std::fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["used"], 8);
    assert!((report["positive_0"]["accuracy"]["mean"].as_f64().unwrap() - 0.945).abs() < 1e-12);
}

#[test]
fn failures_are_one_line_json() {
    let e = error_json(&["no-such-command"]);
    assert_eq!(e["error"], "usage");
    let e = error_json(&["gradcheck", "--model", "Nope"]);
    assert_eq!(e["error"], "unknown_model");
    let dir = tempfile::tempdir().unwrap();
    let e = error_json(&["preprocess", "--data", p(dir.path()), "--task", "supervised", "--out", p(&dir.path().join("o"))]);
    assert!(e["message"].as_str().unwrap().contains("labels.csv"));
    let e = error_json(&["generate", "--anomaly-rate", "1.5", "--out", p(&dir.path().join("g"))]);
    assert_eq!(e["error"], "invalid_argument");
    let out = tgraph(&["--help"]);
    assert!(out.status.success());
}
