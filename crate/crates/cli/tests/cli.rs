//! End-to-end checks of the `seq2gmm` binary: exit codes, determinism of
//! the training artifacts, and the scoring output format.

use std::path::Path;
use std::process::{Command, Output};

fn seq2gmm(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_seq2gmm"))
        .args(args)
        .current_dir(dir)
        .env_remove("SEQ2GMM_SEED")
        .output()
        .expect("binary runs")
}

fn fast_args<'a>(extra: &[&'a str]) -> Vec<&'a str> {
    let mut args = vec![
        "--set",
        "data.period_length=40",
        "--set",
        "data.num_normal=10",
        "--set",
        "data.num_anomalous=3",
        "--set",
        "data.max_shift=5",
        "--set",
        "data.anomaly_offset=12",
        "--set",
        "data.anomaly_length=10",
        "--set",
        "model.hidden=3",
        "--set",
        "model.estimator_hidden=4",
        "--set",
        "model.components=2",
        "--set",
        "model.segments=2",
        "--set",
        "train.rounds=1",
        "--set",
        "train.pretrain_epochs=4",
        "--set",
        "train.progress=false",
    ];
    args.extend_from_slice(extra);
    args
}

#[test]
fn unknown_flag_exits_one_with_usage() {
    let dir = tempfile::tempdir().unwrap();
    let out = seq2gmm(&["synth", "--no-such-flag"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(!String::from_utf8_lossy(&out.stderr).is_empty());
}

#[test]
fn missing_model_path_exits_two_and_names_it() {
    let dir = tempfile::tempdir().unwrap();
    let out = seq2gmm(
        &["score", "--input", "x.json", "--model", "missing-model.json", "--out", "s.jsonl"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing-model.json"));
}

#[test]
fn train_twice_produces_identical_model_files() {
    let dir = tempfile::tempdir().unwrap();
    let a = seq2gmm(&fast_args(&["--seed", "7", "train", "--out", "a.json"]), dir.path());
    assert_eq!(a.status.code(), Some(0), "stderr: {}", String::from_utf8_lossy(&a.stderr));
    let b = seq2gmm(&fast_args(&["--seed", "7", "train", "--out", "b.json"]), dir.path());
    assert_eq!(b.status.code(), Some(0));
    let bytes_a = std::fs::read(dir.path().join("a.json")).unwrap();
    let bytes_b = std::fs::read(dir.path().join("b.json")).unwrap();
    assert_eq!(bytes_a, bytes_b);
}

#[test]
fn score_emits_one_json_line_per_series() {
    let dir = tempfile::tempdir().unwrap();
    let synth = seq2gmm(&fast_args(&["synth", "--out", "data.json"]), dir.path());
    assert_eq!(synth.status.code(), Some(0));
    let train = seq2gmm(&fast_args(&["--seed", "3", "train", "--out", "model.json"]), dir.path());
    assert_eq!(train.status.code(), Some(0), "stderr: {}", String::from_utf8_lossy(&train.stderr));
    let score = seq2gmm(
        &fast_args(&[
            "score",
            "--input",
            "data.json",
            "--model",
            "model.json",
            "--out",
            "scores.jsonl",
            "--csv",
            "scores.csv",
        ]),
        dir.path(),
    );
    assert_eq!(score.status.code(), Some(0), "stderr: {}", String::from_utf8_lossy(&score.stderr));
    let jsonl = std::fs::read_to_string(dir.path().join("scores.jsonl")).unwrap();
    assert_eq!(jsonl.lines().count(), 13); // 10 normal + 3 anomalous series
    for line in jsonl.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert!(v.get("series_id").is_some());
        assert!(v.get("series_score").is_some());
    }
    let csv = std::fs::read_to_string(dir.path().join("scores.csv")).unwrap();
    assert_eq!(csv.lines().count(), 14); // header + rows
    assert!(csv.starts_with("series_id,score,label"));
}

#[test]
fn segment_reports_breakpoints_and_spans() {
    let dir = tempfile::tempdir().unwrap();
    seq2gmm(&fast_args(&["synth", "--out", "data.json"]), dir.path());
    let out = seq2gmm(
        &fast_args(&["segment", "--input", "data.json", "--out", "segments.json"]),
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(0), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let v: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("segments.json")).unwrap())
            .unwrap();
    let rows = v.as_array().unwrap();
    assert_eq!(rows.len(), 13);
    assert_eq!(rows[0]["M"], 2);
    assert_eq!(rows[0]["spans"].as_array().unwrap().len(), 2);
}

#[test]
fn env_seed_overrides_config_file() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("c.toml"), "[train]\nseed = 1\n").unwrap();
    let with_env = Command::new(env!("CARGO_BIN_EXE_seq2gmm"))
        .args(fast_args(&["--config", "c.toml", "train", "--out", "env.json"]))
        .current_dir(dir.path())
        .env("SEQ2GMM_SEED", "7")
        .output()
        .unwrap();
    assert_eq!(with_env.status.code(), Some(0));
    let direct = seq2gmm(&fast_args(&["--seed", "7", "train", "--out", "direct.json"]), dir.path());
    assert_eq!(direct.status.code(), Some(0));
    assert_eq!(
        std::fs::read(dir.path().join("env.json")).unwrap(),
        std::fs::read(dir.path().join("direct.json")).unwrap()
    );
}

#[test]
fn eval_writes_results_directory() {
    let dir = tempfile::tempdir().unwrap();
    let out = seq2gmm(
        &fast_args(&["--set", "experiment.runs=1", "--set", "experiment.out_dir=\"res\"", "eval"]),
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(0), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("res/results.json").is_file());
    assert!(dir.path().join("res/results.md").is_file());
    assert!(dir.path().join("res/scores/seed-0.jsonl").is_file());
    assert!(dir.path().join("res/latent/seed-0.csv").is_file());
    assert!(dir.path().join("res/trace/seed-0.json").is_file());
}
