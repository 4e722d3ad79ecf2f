mod common;

use std::path::Path;
use std::process::{Command, Output};

use tempfile::tempdir;

fn steal(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_steal"))
        .args(args)
        .env("RUST_LOG", "warn")
        .env_remove("STEAL_SEED")
        .output()
        .expect("spawn steal")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn version_and_help_succeed() {
    let o = steal(&["--version"]);
    assert_eq!(code(&o), 0);
    assert!(String::from_utf8_lossy(&o.stdout).contains(env!("CARGO_PKG_VERSION")));
    assert_eq!(code(&steal(&["train", "--help"])), 0);
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(code(&steal(&[])), 1);
    assert_eq!(code(&steal(&["eval", "--data", "x"])), 1);
    assert_eq!(code(&steal(&["bogus"])), 1);
}

#[test]
fn config_errors_exit_one() {
    let dir = tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, "train.nonsense = 3\n").unwrap();
    let o = steal(&["train", "--config", path(&cfg)]);
    assert_eq!(code(&o), 1, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(code(&steal(&["train", "--set", "synth.p=1.5"])), 1);
    assert_eq!(
        code(&steal(&[
            "synth",
            "--out",
            path(dir.path()),
            "--set",
            "frames=notanumber"
        ])),
        1
    );
}

#[test]
fn data_errors_exit_two() {
    let dir = tempdir().unwrap();
    let missing = dir.path().join("missing.ckpt");
    let o = steal(&["score", "--ckpt", path(&missing), "--data", path(dir.path())]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("missing.ckpt"));
    let o = steal(&[
        "train",
        "--data",
        path(&dir.path().join("nothing")),
        "--out",
        path(&dir.path().join("run")),
    ]);
    assert_eq!(code(&o), 2);
}

#[test]
fn synth_creates_a_benchmark() {
    let dir = tempdir().unwrap();
    let out = dir.path().join("bench");
    let o = steal(&[
        "synth",
        "--out",
        path(&out),
        "--set",
        "frames=24",
        "--set",
        "anomaly_length=6",
        "--set",
        "train_videos=1",
        "--set",
        "test_videos=1",
        "--set",
        "height=16",
        "--set",
        "width=16",
        "--set",
        "max_radius=3",
        "--set",
        "min_radius=2",
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.join("manifest.json").is_file());
    assert!(out.join("train/01/000024.png").is_file());
    assert!(out.join("test_labels/01.txt").is_file());
}

#[test]
fn model_info_lists_presets() {
    let o = steal(&["model-info", "--preset", "paper"]);
    assert_eq!(code(&o), 0);
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(text.contains("256"), "{text}");
    assert_eq!(code(&steal(&["model-info", "--preset", "giant"])), 1);
}

#[test]
fn train_eval_score_roundtrip() {
    let dir = tempdir().unwrap();
    let data = common::tiny_bench(&dir.path().join("bench"));
    let run = dir.path().join("run");
    let o = steal(&[
        "train",
        "--data",
        path(&data),
        "--out",
        path(&run),
        "--set",
        "seed=3",
        "--set",
        "data.height=32",
        "--set",
        "data.width=32",
        "--set",
        "model.clip_length=4",
        "--set",
        "train.steps=3",
        "--set",
        "train.batch_size=2",
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let ckpt = run.join("final.ckpt");
    assert!(ckpt.is_file());
    assert!(run.join("journal.csv").is_file());
    assert!(run.join("config.snapshot.toml").is_file());

    let eval = dir.path().join("eval");
    let o = steal(&[
        "eval",
        "--ckpt",
        path(&ckpt),
        "--data",
        path(&data),
        "--out",
        path(&eval),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let stdout = String::from_utf8_lossy(&o.stdout);
    let auc: f64 = stdout.trim().strip_prefix("AUC ").unwrap().parse().unwrap();
    assert!((0.0..=1.0).contains(&auc));
    assert!(eval.join("report.json").is_file() && eval.join("roc.csv").is_file());

    let scores = dir.path().join("scores");
    let o = steal(&[
        "score",
        "--ckpt",
        path(&ckpt),
        "--data",
        path(&data),
        "--out",
        path(&scores),
        "--video",
        "02",
        "--heatmaps",
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(scores.join("02.csv").is_file());
    assert!(!scores.join("01.csv").exists());
    assert!(scores.join("heatmaps/02/000003.png").is_file());

    let o = steal(&[
        "compare",
        "--a",
        path(&ckpt),
        "--b",
        path(&ckpt),
        "--data",
        path(&data),
        "--out",
        path(&dir.path().join("cmp")),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
}
