use std::path::{Path, PathBuf};
use std::process::Command;

use serde_json::Value;

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

fn run(cmd: &str, cfg: &str, out: &Path, extra: &[&str]) -> i32 {
    Command::new(env!("CARGO_BIN_EXE_wavegauge"))
        .arg(cmd)
        .arg("--config")
        .arg(fixture(cfg))
        .arg("--out")
        .arg(out)
        .arg("--no-timestamp")
        .args(extra)
        .output()
        .expect("binary runs")
        .status
        .code()
        .expect("exit code")
}

fn report(out: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(out.join("report.json")).unwrap()).unwrap()
}

#[test]
fn simulate_passes_and_writes_trace() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run("simulate", "simulate.json", dir.path(), &[]), 0);
    let r = report(dir.path());
    assert_eq!(r["pass"], true);
    assert!(r["reconstruction_error"].as_f64().unwrap() < 1e-5);
    assert!(r.get("generated_at").is_none());
    let csv = std::fs::read_to_string(dir.path().join("trace.csv")).unwrap();
    assert!(csv.starts_with("t,unitarity_defect,fs_distance,idempotency_defect,reconstruction_error\n"));
    assert_eq!(csv.lines().count(), 4002);
}

#[test]
fn simulate_tolerance_miss_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run("simulate", "simulate_tight.json", dir.path(), &[]), 1);
    assert_eq!(report(dir.path())["pass"], false);
}

#[test]
fn verify_clean_instances_pass() {
    for cfg in ["verify.json", "verify_abelian.json"] {
        let dir = tempfile::tempdir().unwrap();
        assert_eq!(run("verify", cfg, dir.path(), &[]), 0, "{cfg}");
        let r = report(dir.path());
        assert!(r["failed"].as_array().unwrap().is_empty());
        assert!(r["diagnostics"]["strictness_defect"].as_f64().unwrap() > 1e-3);
    }
}

#[test]
fn verify_defect_names_the_broken_identities() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run("verify", "verify_defect.json", dir.path(), &[]), 1);
    let failed: Vec<String> = serde_json::from_value(report(dir.path())["failed"].clone()).unwrap();
    assert!(failed.contains(&"bundle.h_cocycle_triple".to_string()), "{failed:?}");
    assert!(failed.contains(&"bundle.two_transition_trivial".to_string()), "{failed:?}");
    assert!(failed.iter().all(|f| f.starts_with("bundle.")), "{failed:?}");
}

#[test]
fn verify_zero_samples_is_an_empty_pass() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run("verify", "verify_empty.json", dir.path(), &[]), 0);
    let r = report(dir.path());
    assert!(r["identities"].as_array().unwrap().iter().all(|c| c["max_residual"] == 0.0));
}

#[test]
fn reports_are_deterministic_across_thread_counts() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    assert_eq!(run("verify", "verify.json", a.path(), &["--threads", "1"]), 0);
    assert_eq!(run("verify", "verify.json", b.path(), &["--threads", "2"]), 0);
    let ra = std::fs::read(a.path().join("report.json")).unwrap();
    let rb = std::fs::read(b.path().join("report.json")).unwrap();
    assert_eq!(ra, rb);
}

#[test]
fn holonomy_abelian_surface_agrees() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run("holonomy", "holonomy.json", dir.path(), &[]), 0);
    let r = report(dir.path());
    assert_eq!(r["elementary"], true);
    assert!(r["source_boundary_residual"].as_f64().unwrap() < 1e-8);
    let levels = r["abelian"]["levels"].as_array().unwrap();
    assert!(levels.last().unwrap()["second_kind_distance"].as_f64().unwrap() < 1e-6);
}

#[test]
fn cartan_order_and_csv() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run("cartan", "cartan.json", dir.path(), &[]), 0);
    let order = report(dir.path())["refinement"]["order"].as_f64().unwrap();
    assert!((order - 3.0).abs() < 0.3, "{order}");
    let csv = std::fs::read_to_string(dir.path().join("convergence.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);

    let zero = tempfile::tempdir().unwrap();
    assert_eq!(run("cartan", "cartan_zero.json", zero.path(), &[]), 0);
    assert_eq!(report(zero.path())["trivial"], true);

    let narrow = tempfile::tempdir().unwrap();
    assert_eq!(run("cartan", "cartan.json", narrow.path(), &["--tol", "1e-4"]), 1);
}

#[test]
fn configuration_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run("verify", "bad_dims.json", dir.path(), &[]), 2);
    assert_eq!(run("verify", "unknown_key.json", dir.path(), &[]), 2);
    assert_eq!(run("cartan", "cartan_short.json", dir.path(), &[]), 2);
    assert_eq!(run("simulate", "verify.json", dir.path(), &[]), 2);
    assert!(!dir.path().join("report.json").exists());
}

#[test]
fn numerical_failure_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("closing.json");
    // the two levels meet exactly at t = 1, a grid node
    std::fs::write(
        &cfg,
        r#"{"n": 2, "m": 1, "grid": {"duration": 2.0, "steps": 400}, "model": {"kind": "table", "times": [0.0, 1.0, 2.0], "matrices": [
            [[[0.0, 0.0], [0.0, 0.0]], [[0.0, 0.0], [1.0, 0.0]]],
            [[[0.5, 0.0], [0.0, 0.0]], [[0.0, 0.0], [0.5, 0.0]]],
            [[[1.0, 0.0], [0.0, 0.0]], [[0.0, 0.0], [0.0, 0.0]]]]}}"#,
    )
    .unwrap();
    let code = Command::new(env!("CARGO_BIN_EXE_wavegauge"))
        .args(["simulate", "--no-timestamp", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(dir.path())
        .status()
        .unwrap()
        .code();
    assert_eq!(code, Some(3));
}
