use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_surrogate-ep"))
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

#[test]
fn shipped_configs_validate() {
    for entry in std::fs::read_dir(configs()).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "toml") {
            let out = run(&["validate", "--config", path.to_str().unwrap()]);
            assert!(out.status.success(), "{}: {}", path.display(), String::from_utf8_lossy(&out.stderr));
        }
    }
}

#[test]
fn usage_errors_exit_two() {
    assert_eq!(run(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(run(&["oracle", "no-such-suite"]).status.code(), Some(2));
    assert_eq!(run(&["run"]).status.code(), Some(2));
}

#[test]
fn invalid_config_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    std::fs::write(&path, "version = 1\nexperiment = \"deconvolution\"\nn_replicates = 0\nseed = 1\noutput_dir = \"out\"\n")
        .unwrap();
    let out = run(&["--json", "validate", "--config", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["ok"], false);
}

#[test]
fn unwritable_output_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    std::fs::write(&blocker, "").unwrap();
    let cfg = std::fs::read_to_string(configs().join("custom.toml"))
        .unwrap()
        .replace("\"../runs/custom\"", &format!("{:?}", blocker.join("out")));
    let path = dir.path().join("custom.toml");
    std::fs::write(&path, cfg).unwrap();
    let out = run(&["run", "--config", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(!out.stderr.is_empty());
}

#[test]
fn run_then_summarize() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = std::fs::read_to_string(configs().join("custom.toml"))
        .unwrap()
        .replace("\"../runs/custom\"", "\"out\"");
    let path = dir.path().join("custom.toml");
    std::fs::write(&path, cfg).unwrap();
    let out = run(&["--json", "run", "--config", path.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["completed"], 5);
    let manifest = dir.path().join("out/manifest.json");
    assert!(manifest.is_file());

    let out = run(&["summarize", "--manifest", manifest.to_str().unwrap()]);
    assert!(out.status.success());
    assert!(dir.path().join("out/report_coverage.csv").is_file());
    assert!(dir.path().join("out/report_summary.json").is_file());
}

#[test]
fn oracle_reports_json() {
    let out = run(&["--json", "oracle", "spectrum"]);
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["suite"], "spectrum");
    let checks = v["checks"].as_array().unwrap();
    assert!(!checks.is_empty());
    assert!(checks.iter().all(|c| c["passed"] == true));
}
