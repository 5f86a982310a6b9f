//! End-to-end runs of the `gat` binary on the shipped configurations.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

fn gat(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gat"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn run(command: &str, config: &Path, out: &Path) -> Output {
    gat(&[
        command,
        "--config",
        config.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ])
}

fn metadata(out: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(out.join("metadata.json")).unwrap()).unwrap()
}

#[test]
fn zero_curvature_checks_pass_and_flag() {
    let dir = tempfile::tempdir().unwrap();
    let ok = run("check-zc", &config("zc_single_asset.toml"), dir.path());
    assert_eq!(ok.status.code(), Some(0), "{}", String::from_utf8_lossy(&ok.stderr));
    assert!(dir.path().join("zc_report.csv").exists());
    assert_eq!(metadata(dir.path())["status"], "pass");

    let dir = tempfile::tempdir().unwrap();
    let flagged = run("check-zc", &config("zc_planted_rho.toml"), dir.path());
    assert_eq!(flagged.status.code(), Some(1));
    assert_eq!(metadata(dir.path())["status"], "flagged");
}

#[test]
fn price_run_is_byte_identical_on_rerun() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for dir in [&a, &b] {
        let out = run("price", &config("price_atm.toml"), dir.path());
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    }
    for file in ["surface.csv", "metadata.json"] {
        let x = std::fs::read(a.path().join(file)).unwrap();
        let y = std::fs::read(b.path().join(file)).unwrap();
        assert_eq!(x, y, "{file} differs between runs");
    }
    let csv = std::fs::read_to_string(a.path().join("surface.csv")).unwrap();
    assert!(csv.starts_with("t,X,Phi"));
}

#[test]
fn seed_flag_overrides_the_configuration() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("sim.toml");
    std::fs::write(
        &cfg,
        r#"
        schema_version = 1
        seed = 1
        [[market.samples]]
        t = 0.0
        alpha = [0.05, 0.02]
        sigma = [[0.2], [0.1]]
        r = [0.0, 0.0]
        [simulation]
        paths = 400
        dt = 0.05
        horizon = 1.0
        s0 = [1.0, 1.0]
        buckets = [[0.5, 0.75]]
        "#,
    )
    .unwrap();
    let out = dir.path().join("out");
    let status = gat(&[
        "simulate",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--seed",
        "42",
    ]);
    assert!(matches!(status.status.code(), Some(0 | 1)), "{}", String::from_utf8_lossy(&status.stderr));
    assert_eq!(metadata(&out)["seed"], 42);
    assert!(out.join("ensemble.gate").exists());
    assert!(out.join("rho_report.csv").exists());
}

#[test]
fn usage_and_configuration_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let missing = run("price", &dir.path().join("absent.toml"), dir.path());
    assert_eq!(missing.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&missing.stderr).contains("config"));

    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "schema_version = 1\nunknown_key = 3\n").unwrap();
    assert_eq!(run("price", &bad, dir.path()).status.code(), Some(2));

    let wrong_version = dir.path().join("v2.toml");
    std::fs::write(&wrong_version, "schema_version = 2\n").unwrap();
    assert_eq!(run("price", &wrong_version, dir.path()).status.code(), Some(2));

    assert_eq!(gat(&["price"]).status.code(), Some(2));
    assert_eq!(gat(&["no-such-command"]).status.code(), Some(2));
}
