use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn bin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_listener-scale"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn simulate(dir: &Path, seed: &str) {
    let out = bin(&[
        "simulate",
        "--preset",
        "sqa",
        "--seed",
        seed,
        "--config",
        p(&dir.join("small.json")),
        "--out",
        p(dir),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn small_config(dir: &Path) {
    std::fs::write(
        dir.join("small.json"),
        r#"{"n_systems": 6, "utterances_per_system": 5}"#,
    )
    .unwrap();
}

#[test]
fn help_and_bad_usage_exit_codes() {
    let help = bin(&["--help"]);
    assert_eq!(help.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&help.stdout).contains("matrix"));
    assert_eq!(bin(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(bin(&["train"]).status.code(), Some(2));
}

#[test]
fn missing_input_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin(&["metrics", "--input", p(&dir.path().join("nope.csv"))]);
    assert_eq!(out.status.code(), Some(3));
    assert!(!out.stderr.is_empty());
}

#[test]
fn embedding_without_mean_listener_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    small_config(dir.path());
    simulate(dir.path(), "1");
    let out = bin(&[
        "train",
        "--ratings",
        p(&dir.path().join("ratings.csv")),
        "--features",
        p(&dir.path().join("features.csv")),
        "--listener-embedding",
        "--out",
        p(&dir.path().join("m.json")),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn simulate_is_deterministic_per_seed() {
    let (a, b, c) = (
        tempfile::tempdir().unwrap(),
        tempfile::tempdir().unwrap(),
        tempfile::tempdir().unwrap(),
    );
    for (d, seed) in [(&a, "5"), (&b, "5"), (&c, "6")] {
        small_config(d.path());
        simulate(d.path(), seed);
    }
    let read = |d: &tempfile::TempDir| std::fs::read(d.path().join("ratings.csv")).unwrap();
    assert_eq!(read(&a), read(&b));
    assert_ne!(read(&a), read(&c));
}

#[test]
fn metrics_joins_by_id() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("pred.csv"), "id,score\na,1\nb,2\nc,3\n").unwrap();
    std::fs::write(dir.path().join("ref.csv"), "id,score\nc,4\na,2\nb,3\n").unwrap();
    let out = bin(&[
        "metrics",
        "--pred",
        p(&dir.path().join("pred.csv")),
        "--ref",
        p(&dir.path().join("ref.csv")),
    ]);
    assert!(out.status.success());
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["srcc"], 1.0);
    assert_eq!(v["lcc"], 1.0);
    assert!((v["ccc"].as_f64().unwrap() - 4.0 / 7.0).abs() < 1e-12);
    assert_eq!(v["n"], 3);
}

#[test]
fn train_then_eval_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    small_config(d);
    simulate(d, "2");
    let model = d.join("model.json");
    let train = bin(&[
        "train",
        "--ratings",
        p(&d.join("ratings.csv")),
        "--features",
        p(&d.join("features.csv")),
        "--mean-listener",
        "--listener-embedding",
        "--epochs",
        "5",
        "--out",
        p(&model),
    ]);
    assert!(
        train.status.success(),
        "{}",
        String::from_utf8_lossy(&train.stderr)
    );
    for mode in ["comparison", "average", "utterance"] {
        let out_dir = d.join(mode);
        let eval = bin(&[
            "eval",
            "--model",
            p(&model),
            "--ratings",
            p(&d.join("ratings.csv")),
            "--features",
            p(&d.join("features.csv")),
            "--truth",
            p(&d.join("truth.csv")),
            "--mode",
            mode,
            "--out",
            p(&out_dir),
        ]);
        assert!(
            eval.status.success(),
            "{mode}: {}",
            String::from_utf8_lossy(&eval.stderr)
        );
        let v: Value =
            serde_json::from_slice(&std::fs::read(out_dir.join("eval.json")).unwrap()).unwrap();
        assert_eq!(v["mode"], mode);
        assert_eq!(v["reference"], "truth");
        assert!(v["srcc"].as_f64().unwrap().abs() <= 1.0);
        let scores = std::fs::read_to_string(out_dir.join("scores.csv")).unwrap();
        let expected = if mode == "utterance" { 30 } else { 6 };
        assert_eq!(scores.lines().count(), expected + 1);
    }
}

#[test]
fn matrix_writes_reports_and_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("m.json");
    std::fs::write(
        &cfg,
        r#"{"repeats": 2, "sim": {"n_systems": 6, "utterances_per_system": 5},
            "scorer": {"epochs": 3},
            "regimes": [{"model": "DAS", "mean_listener": false, "listener_embedding": false},
                        {"model": "CL", "mean_listener": false, "listener_embedding": false}]}"#,
    )
    .unwrap();
    let out = dir.path().join("out");
    let run = bin(&["matrix", "--config", p(&cfg), "--out", p(&out)]);
    assert!(
        run.status.success(),
        "{}",
        String::from_utf8_lossy(&run.stderr)
    );
    let report: Value =
        serde_json::from_slice(&std::fs::read(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["regimes"].as_array().unwrap().len(), 2);
    assert!(std::fs::read_to_string(out.join("report.md"))
        .unwrap()
        .starts_with("| Model |"));
    assert_eq!(
        std::fs::read_dir(out.join("checkpoints")).unwrap().count(),
        4
    );
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"repeats": 0}"#).unwrap();
    assert_eq!(
        bin(&["matrix", "--config", p(&bad), "--out", p(&out)])
            .status
            .code(),
        Some(2)
    );
}
