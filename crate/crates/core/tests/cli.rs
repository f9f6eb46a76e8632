use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_pocvcf"))
}

fn scenario(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios").join(format!("{name}.toml"))
}

#[test]
fn run_writes_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let status = bin()
        .args(["run", scenario("double_spend").to_str().unwrap(), "--seed", "3", "--out"])
        .arg(dir.path())
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));

    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(report["metrics"]["seed"], 3);
    assert_eq!(report["verdicts"]["safety"]["pass"], true);
    let trace = fs::read_to_string(dir.path().join("trace.jsonl")).unwrap();
    assert!(trace.lines().next().unwrap().contains("\"kind\":\"run\""));
    let mut csv = csv::Reader::from_path(dir.path().join("metrics.csv")).unwrap();
    assert_eq!(csv.headers().unwrap().len(), pocvcf::harness::CSV_COLUMNS.len());
    assert_eq!(csv.records().count(), 1);
    assert!(!dir.path().join("forensics.json").exists());
}

#[test]
fn safety_failure_writes_forensics() {
    let dir = tempfile::tempdir().unwrap();
    let status = bin()
        .args(["run", scenario("partition").to_str().unwrap(), "--assert", "safety", "--out"])
        .arg(dir.path())
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(pocvcf::harness::EXIT_SAFETY));
    let forensics: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("forensics.json")).unwrap()).unwrap();
    assert!(!forensics["violations"].as_array().unwrap().is_empty());
    assert!(forensics["offenders"].as_array().unwrap().len() >= 6);
}

#[test]
fn sweep_writes_one_row_per_value() {
    let dir = tempfile::tempdir().unwrap();
    let status = bin()
        .args(["sweep", scenario("complexity").to_str().unwrap(), "--param", "K=4,6,8", "--out"])
        .arg(dir.path())
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    let mut csv = csv::Reader::from_path(dir.path().join("metrics.csv")).unwrap();
    let ks: Vec<String> = csv.records().map(|r| r.unwrap()[2].to_string()).collect();
    assert_eq!(ks, ["4", "6", "8"]);
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    assert!(report["t_cf_quadratic"].is_object());
}

#[test]
fn config_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "epochs = 2\n[protocol]\nepoch_size = 0\n").unwrap();
    let out = bin().args(["run", bad.to_str().unwrap()]).current_dir(dir.path()).output().unwrap();
    assert_eq!(out.status.code(), Some(pocvcf::harness::EXIT_CONFIG));
    assert!(!String::from_utf8_lossy(&out.stderr).is_empty());

    let missing = bin().args(["run", "no_such_file.toml"]).current_dir(dir.path()).status().unwrap();
    assert_eq!(missing.code(), Some(pocvcf::harness::EXIT_CONFIG));
}
