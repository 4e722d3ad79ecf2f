#![allow(dead_code)]

pub mod oracles;

use std::path::{Path, PathBuf};

use steal_core::config::RunConfig;
use steal_core::synthbench::{build_benchmark, BenchConfig};

/// 32×32 benchmark small enough for many quick training runs.
pub fn tiny_bench_config() -> BenchConfig {
    BenchConfig {
        height: 32,
        width: 32,
        min_radius: 2,
        max_radius: 4,
        train_videos: 2,
        test_videos: 2,
        frames: 48,
        anomaly_length: 12,
        noise_knot: 16,
        ..BenchConfig::default()
    }
}

pub fn tiny_bench(root: &Path) -> PathBuf {
    build_benchmark(&tiny_bench_config(), root).unwrap();
    root.to_path_buf()
}

/// Desk ladder at 32×32, T=4.
pub fn tiny_run(data: &Path, out: &Path, seed: u64, p: f64, steps: u64) -> RunConfig {
    let overrides = vec![
        format!("seed={seed}"),
        format!("data.root=\"{}\"", data.display()),
        format!("out=\"{}\"", out.display()),
        "data.height=32".into(),
        "data.width=32".into(),
        "model.clip_length=4".into(),
        format!("train.steps={steps}"),
        "train.batch_size=2".into(),
        "train.learning_rate=0.001".into(),
        "train.checkpoint_every=0".into(),
        format!("synth.p={p}"),
        "score.batch=16".into(),
    ];
    RunConfig::from_toml_str("", &overrides).unwrap()
}

/// Journal rows with the wall-clock column dropped.
pub fn journal_without_time(path: &Path) -> Vec<(u64, u64, usize, usize, usize, String)> {
    steal_core::training::read_journal(path)
        .unwrap()
        .into_iter()
        .map(|r| {
            (
                r.step,
                r.loss.to_bits(),
                r.normal_count,
                r.pseudo_count,
                r.fallback_count,
                r.clips,
            )
        })
        .collect()
}

/// Every file under `root` with its bytes, keyed by relative path.
pub fn tree_bytes(root: &Path) -> std::collections::BTreeMap<PathBuf, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut std::collections::BTreeMap<PathBuf, Vec<u8>>) {
        for entry in std::fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(root, &path, out);
            } else {
                out.insert(
                    path.strip_prefix(root).unwrap().to_path_buf(),
                    std::fs::read(&path).unwrap(),
                );
            }
        }
    }
    let mut out = std::collections::BTreeMap::new();
    walk(root, root, &mut out);
    out
}

/// Relative paths whose contents differ between two trees (missing counts as different).
pub fn tree_diff(a: &Path, b: &Path) -> Vec<PathBuf> {
    let (ta, tb) = (tree_bytes(a), tree_bytes(b));
    let mut keys: Vec<&PathBuf> = ta.keys().chain(tb.keys()).collect();
    keys.sort();
    keys.dedup();
    keys.into_iter().filter(|k| ta.get(*k) != tb.get(*k)).cloned().collect()
}
