use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn au3d(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_au3d")).args(args).output().expect("binary runs")
}

fn synth(dir: &Path, extra: &[&str]) -> PathBuf {
    let out = dir.to_str().unwrap();
    let mut args = vec!["synth", "--subjects", "4", "--frames", "6", "--seed", "3", "--out", out];
    args.extend_from_slice(extra);
    let o = au3d(&args);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let manifest = PathBuf::from(String::from_utf8(o.stdout).unwrap().trim());
    assert!(manifest.exists());
    manifest
}

#[test]
fn stats_prints_one_row_per_au() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth(dir.path(), &[]);
    let o = au3d(&["stats", "--manifest", manifest.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    let text = String::from_utf8(o.stdout).unwrap();
    let rows: Vec<&str> = text.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(rows[0], "au,occurrence_pct");
    assert_eq!(rows.len(), 13);
}

#[test]
fn train_then_eval_reports_json() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth(&dir.path().join("data"), &[]);
    let model = dir.path().join("model.aunn");
    let m = manifest.to_str().unwrap();
    let o = au3d(&["train", "--manifest", m, "--epochs", "2", "--c", "8", "--seed", "1", "--out", model.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let losses: Vec<&str> = std::str::from_utf8(&o.stderr).unwrap().lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(losses.len(), 2);
    assert!(losses.iter().all(|l| l.split_once(',').is_some_and(|(_, v)| v.parse::<f64>().is_ok())));

    let o = au3d(&["eval", "--model", model.to_str().unwrap(), "--manifest", m, "--format", "json"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let doc: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(doc["rows"].as_array().unwrap().len(), 12);
    assert!(doc["avg"].is_object());
}

#[test]
fn crossval_three_class_csv() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth(dir.path(), &["--unknown-rate", "0.1"]);
    let report = dir.path().join("report.csv");
    let o = au3d(&[
        "crossval", "--manifest", manifest.to_str().unwrap(), "--variant", "3class", "--folds", "2", "--epochs", "1",
        "--c", "8", "--format", "csv", "--out", report.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(report).unwrap();
    assert!(text.lines().any(|l| l.starts_with("au,f1_macro,f1_micro")), "{text}");
}

#[test]
fn gradcheck_small_descriptor_passes() {
    let o = au3d(&["gradcheck", "--descriptor", "small-3class", "--seed", "2"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(String::from_utf8(o.stdout).unwrap().contains("max relative error"));
}

#[test]
fn usage_errors_exit_1() {
    assert_eq!(au3d(&["gradcheck", "--descriptor", "huge"]).status.code(), Some(1));
    assert_eq!(au3d(&["crossval", "--config", "/nonexistent/config.json"]).status.code(), Some(1));
    assert_eq!(au3d(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(au3d(&["--help"]).status.code(), Some(0));
}

#[test]
fn data_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.aunn");
    std::fs::write(&bad, b"not a checkpoint").unwrap();
    let manifest = synth(&dir.path().join("data"), &[]);
    let o = au3d(&["eval", "--model", bad.to_str().unwrap(), "--manifest", manifest.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(au3d(&["stats", "--manifest", "/nonexistent/manifest.json"]).status.code(), Some(2));
}
