use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use sha2::{Digest, Sha256};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_semitunnel"))
}

fn canonical_config() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/canonical.json")
}

fn run(args: &[&str], out: &Path) -> Output {
    bin().args(args).arg("--out").arg(out).output().unwrap()
}

/// Canonical config with a different hbar list.
fn config_with_hbar(dir: &Path, hbar: &[f64]) -> PathBuf {
    let mut cfg: serde_json::Value = serde_json::from_str(&fs::read_to_string(canonical_config()).unwrap()).unwrap();
    cfg["hbar_list"] = serde_json::json!(hbar);
    let path = dir.join("config.json");
    fs::write(&path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    path
}

#[test]
fn validate_reports_all_hypotheses() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(&["validate", canonical_config().to_str().unwrap()], tmp.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("hypotheses: all pass"));
    let manifest: serde_json::Value = serde_json::from_slice(&fs::read(tmp.path().join("manifest.json")).unwrap()).unwrap();
    let hash: String = Sha256::digest(fs::read(canonical_config()).unwrap()).iter().map(|b| format!("{b:02x}")).collect();
    assert_eq!(manifest["config_sha256"], hash);
    assert_eq!(manifest["subcommand"], "validate");
    assert!(manifest["files"]["validate.json"].is_string());
}

#[test]
fn estar_prints_saddle() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(&["estar", canonical_config().to_str().unwrap()], tmp.path());
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("E* = 0.8598548"), "{text}");
    assert!(text.contains("alpha(E*) = 0.4187224"), "{text}");
}

#[test]
fn unknown_subcommand_prints_usage() {
    let out = bin().args(["frobnicate", "x.json"]).output().unwrap();
    assert_ne!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
}

#[test]
fn config_errors_exit_with_one() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = tmp.path().join("bad.json");
    fs::write(&bad, r#"{"potential": {"kind": "eckart", "params": {"height": 1, "a": 1}}}"#).unwrap();
    assert_eq!(run(&["estar", bad.to_str().unwrap()], tmp.path()).status.code(), Some(1));
    let missing = tmp.path().join("missing.json");
    assert_eq!(run(&["estar", missing.to_str().unwrap()], tmp.path()).status.code(), Some(1));
    let out = bin()
        .env("SEMITUNNEL_WORKERS", "zero")
        .args(["estar", canonical_config().to_str().unwrap(), "--out"])
        .arg(tmp.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn csv_outputs_are_bitwise_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config_with_hbar(tmp.path(), &[0.125, 0.0625]);
    let cfg = cfg.to_str().unwrap();
    let mut outputs = Vec::new();
    for workers in ["1", "2"] {
        let dir = tmp.path().join(format!("w{workers}"));
        for args in [vec!["transmission", cfg, "--energies", "3"], vec!["trajectory", cfg], vec!["actions", cfg]] {
            let out = bin().env("SEMITUNNEL_WORKERS", workers).args(&args).arg("--out").arg(&dir).output().unwrap();
            assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
        }
        outputs.push(["transmission.csv", "trajectory.csv", "actions.csv"].map(|f| fs::read(dir.join(f)).unwrap()));
    }
    assert_eq!(outputs[0], outputs[1]);
    let text = String::from_utf8(outputs[0][0].clone()).unwrap();
    assert_eq!(text.lines().count(), 1 + 2 * 3);
    // 17 significant digits in every numeric cell
    let cell = text.lines().nth(1).unwrap().split(',').next().unwrap();
    assert_eq!(cell.split('e').next().unwrap().replace(['.', '-'], "").len(), 17);
}

#[test]
fn manifest_config_reruns_identically() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config_with_hbar(tmp.path(), &[0.125]);
    let first = tmp.path().join("first");
    assert_eq!(run(&["transmission", cfg.to_str().unwrap(), "--energies", "2"], &first).status.code(), Some(0));
    let manifest: serde_json::Value = serde_json::from_slice(&fs::read(first.join("manifest.json")).unwrap()).unwrap();
    let again = tmp.path().join("again.json");
    fs::write(&again, manifest["config"].to_string()).unwrap();
    let second = tmp.path().join("second");
    assert_eq!(run(&["transmission", again.to_str().unwrap(), "--energies", "2"], &second).status.code(), Some(0));
    assert_eq!(fs::read(first.join("transmission.csv")).unwrap(), fs::read(second.join("transmission.csv")).unwrap());
}

#[test]
fn evolve_writes_binary_snapshots() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config_with_hbar(tmp.path(), &[0.125]);
    let out = run(&["evolve", cfg.to_str().unwrap(), "--binary"], tmp.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let file = fs::File::open(tmp.path().join("evolve_h0_probe.bin")).unwrap();
    let field = semitunnel::tdse::read_binary_snapshot(std::io::BufReader::new(file)).unwrap();
    assert!(field.grid.n.is_power_of_two());
    let trace: serde_json::Value = serde_json::from_slice(&fs::read(tmp.path().join("evolve_h0_trace.json")).unwrap()).unwrap();
    assert!(trace["drift_per_10k_steps"].as_f64().unwrap() < 1e-12);
    assert!((field.t - trace["t_probe"].as_f64().unwrap()).abs() < trace["config"]["dt"].as_f64().unwrap());
}
