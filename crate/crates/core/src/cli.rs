//! Command-line entry point.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data error,
//! 3 numeric failure.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use log::{error, info};
use serde::Serialize;

use crate::config::RunConfig;
use crate::dataset::{load_dataset, Split};
use crate::error::{Error, Result};
use crate::evaluation::{compare, evaluate_index, roc_auc};
use crate::model::checkpoint::Checkpoint;
use crate::model::{describe, Architecture, Preset};
use crate::scoring::{error_heatmap, expand_window_scores, score_windows, write_heatmap_png, ScoreSeries};
use crate::synthbench::{build_benchmark, regenerate, BenchConfig, MANIFEST_FILE};
use crate::training::train;

#[derive(Debug, Parser)]
#[command(
    name = "steal",
    version,
    about = "Video anomaly detection with temporal pseudo anomalies"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone, Default)]
pub struct ConfigArgs {
    /// TOML config file.
    #[arg(long, short)]
    pub config: Option<PathBuf>,
    /// Override a config key, e.g. `--set synth.p=0.01` (repeatable; beats the file).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train an autoencoder; writes journal, checkpoints and a config snapshot.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Dataset root (overrides `data.root`).
        #[arg(long)]
        data: Option<PathBuf>,
        /// Output directory (overrides `out`).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Resume from a checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Write per-frame scores (and optionally error heatmaps) for test videos.
    Score {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "scores")]
        out: PathBuf,
        /// Only this video.
        #[arg(long)]
        video: Option<String>,
        /// Also write a heatmap PNG per scored frame.
        #[arg(long)]
        heatmaps: bool,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Frame-level ROC AUC over the test split.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "eval")]
        out: PathBuf,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// AUCs of two checkpoints side by side.
    Compare {
        /// Reference checkpoint (e.g. the baseline).
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "compare")]
        out: PathBuf,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Generate a synthetic moving-sprite benchmark.
    Synth {
        #[arg(long)]
        out: PathBuf,
        /// Benchmark TOML (keys of the generator config).
        #[arg(long, short)]
        config: Option<PathBuf>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        /// Re-render from an existing manifest instead.
        #[arg(long, conflicts_with_all = ["config", "overrides"])]
        from_manifest: Option<PathBuf>,
    },
    /// Train and evaluate one model per (p, skip set) grid cell.
    Ablate {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Comma-separated probabilities.
        #[arg(long, value_delimiter = ',', default_values_t = [0.0, 0.01])]
        p: Vec<f64>,
        /// Skip sets separated by `;`, values by `,` (e.g. "2,3,4,5;2").
        #[arg(long, default_value = "2,3,4,5")]
        skip_sets: String,
    },
    /// Print layer shapes and parameter counts.
    ModelInfo {
        /// Preset to describe; beats `model.preset` from the config.
        #[arg(long)]
        preset: Option<Preset>,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
}

/// Parses `argv`, runs the command and returns the process exit code.
pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match run(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            error!("{e}");
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn with_dirs(cfg: &ConfigArgs, data: Option<&Path>, out: Option<&Path>) -> Result<RunConfig> {
    let mut overrides = cfg.overrides.clone();
    if let Some(d) = data {
        overrides.push(format!("data.root={}", toml_string(d)));
    }
    if let Some(o) = out {
        overrides.push(format!("out={}", toml_string(o)));
    }
    RunConfig::load(cfg.config.as_deref(), &overrides)
}

fn toml_string(p: &Path) -> String {
    toml::Value::String(p.display().to_string()).to_string()
}

/// Model plus the run config frozen in its checkpoint, with overrides.
fn load_model(ckpt: &Path, overrides: &[String]) -> Result<(Checkpoint, RunConfig)> {
    let c = Checkpoint::load(ckpt)?;
    let run = RunConfig::from_toml_str(&c.config, overrides)?;
    Ok((c, run))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::Train { cfg, data, out, resume } => {
            let run = with_dirs(&cfg, data.as_deref(), out.as_deref())?;
            let out = train(&run, resume.as_deref())?;
            println!("checkpoint: {}", out.checkpoint.display());
            println!("journal: {}", out.journal.display());
        }
        Command::Score {
            ckpt,
            data,
            out,
            video,
            heatmaps,
            overrides,
        } => {
            let (c, run) = load_model(&ckpt, &overrides)?;
            create_dir(&out)?;
            let index = load_dataset(&data, Split::Test)?;
            let [_, _, h, w] = c.model.arch.input;
            let source = run.disk_frames(h, w);
            let psnr_cfg = run.psnr_config();
            let videos: Vec<_> = match &video {
                Some(id) => vec![index
                    .video(id)
                    .ok_or_else(|| Error::MissingDirectory(index.root.join("test").join(id)))?],
                None => index.videos.iter().collect(),
            };
            for meta in videos {
                let windows = score_windows(&c.model, &source, meta, &psnr_cfg, run.score.batch, heatmaps)?;
                let (psnr, direct) =
                    expand_window_scores(&windows.psnr, meta.frame_count(), psnr_cfg.target_frame_offset);
                let series = ScoreSeries::from_psnr(&meta.video_id, psnr, direct)?;
                series.write_csv(&out.join(format!("{}.csv", meta.video_id)))?;
                if heatmaps {
                    let dir = out.join("heatmaps").join(&meta.video_id);
                    create_dir(&dir)?;
                    let length = c.model.arch.input[0];
                    for (j, recon) in windows.reconstructions.iter().enumerate() {
                        let frame_idx = j + 1 + psnr_cfg.target_frame_offset;
                        let clip = crate::dataset::Clip::assemble(
                            &source,
                            meta,
                            crate::dataset::ClipSpec {
                                video_id: meta.video_id.clone(),
                                start: j + 1,
                                stride: 1,
                                length,
                            },
                        )?;
                        let heat = error_heatmap(clip.frame(psnr_cfg.target_frame_offset), recon)?;
                        write_heatmap_png(&dir.join(format!("{frame_idx:06}.png")), &heat, h, w)?;
                    }
                }
                info!("scored {} ({} frames)", meta.video_id, series.len());
            }
            println!("scores written to {}", out.display());
        }
        Command::Eval {
            ckpt,
            data,
            out,
            overrides,
        } => {
            let (c, run) = load_model(&ckpt, &overrides)?;
            create_dir(&out)?;
            let index = load_dataset(&data, Split::Test)?;
            let [_, _, h, w] = c.model.arch.input;
            let ev = evaluate_index(
                &c.model,
                &index,
                &run.disk_frames(h, w),
                &run.psnr_config(),
                run.score.batch,
            )?;
            ev.report.write_json(&out.join("report.json"))?;
            ev.report.write_roc_csv(&out.join("roc.csv"))?;
            for s in &ev.series {
                s.write_csv(&out.join(format!("scores_{}.csv", s.video_id)))?;
            }
            println!("AUC {:.4}", ev.report.auc);
        }
        Command::Compare {
            a,
            b,
            data,
            out,
            overrides,
        } => {
            let (ca, run) = load_model(&a, &overrides)?;
            let (cb, _) = load_model(&b, &overrides)?;
            create_dir(&out)?;
            let label = |p: &Path| p.display().to_string();
            let cmp = compare(
                (&label(&a), &ca.model),
                (&label(&b), &cb.model),
                &data,
                &run.psnr_config(),
                run.score.batch,
            )?;
            cmp.write_csv(&out.join("compare.csv"))?;
            print!("{}", cmp.to_table());
        }
        Command::Synth {
            out,
            config,
            overrides,
            from_manifest,
        } => {
            let manifest = match from_manifest {
                Some(path) => regenerate(&path, &out)?,
                None => build_benchmark(&bench_config(config.as_deref(), &overrides)?, &out)?,
            };
            println!(
                "{} videos written to {} ({})",
                manifest.videos.len(),
                out.display(),
                MANIFEST_FILE
            );
        }
        Command::Ablate {
            cfg,
            data,
            out,
            p,
            skip_sets,
        } => {
            let base = with_dirs(&cfg, data.as_deref(), None)?;
            let sets = parse_skip_sets(&skip_sets)?;
            let rows = ablate(&base, &p, &sets, &out)?;
            for r in &rows {
                println!(
                    "p={} skip_set={} auc={}",
                    r.p,
                    r.skip_set,
                    r.auc.map_or_else(|| "failed".to_string(), |a| format!("{a:.4}"))
                );
            }
        }
        Command::ModelInfo { preset, cfg } => {
            let arch = if cfg.config.is_some() || !cfg.overrides.is_empty() {
                let mut o = cfg.overrides.clone();
                if let Some(p) = preset {
                    o.push(format!("model.preset=\"{p}\""));
                }
                RunConfig::load(cfg.config.as_deref(), &o)?.architecture()
            } else {
                Architecture::preset(preset.unwrap_or(Preset::Desk))
            };
            print!("{}", describe(&arch));
        }
    }
    Ok(())
}

fn bench_config(path: Option<&Path>, overrides: &[String]) -> Result<BenchConfig> {
    let text = match path {
        Some(p) => fs::read_to_string(p).map_err(|e| Error::io(p, e))?,
        None => String::new(),
    };
    let mut table: toml::Table = toml::from_str(&text).map_err(|e| Error::Config(e.to_string()))?;
    for o in overrides {
        let (k, v) = o
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override {o:?} is not key=value")))?;
        let value = toml::from_str::<toml::Table>(&format!("v = {}", v.trim()))
            .map_err(|e| Error::Config(format!("{o}: {e}")))?
            .remove("v")
            .expect("parsed key");
        table.insert(k.trim().to_string(), value);
    }
    let cfg: BenchConfig = table
        .try_into()
        .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

/// `"2,3,4,5;2"` → `[[2,3,4,5],[2]]`.
pub fn parse_skip_sets(text: &str) -> Result<Vec<Vec<usize>>> {
    text.split(';')
        .map(|set| {
            set.split(',')
                .map(|v| {
                    v.trim()
                        .parse::<usize>()
                        .map_err(|_| Error::Config(format!("bad skip value {v:?}")))
                })
                .collect()
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationRow {
    pub p: f64,
    pub skip_set: String,
    pub auc: Option<f64>,
    pub error: Option<String>,
    pub checkpoint: String,
}

/// Trains and evaluates every `(p, skip set)` cell with the shared seed.
/// A failing cell is recorded and the sweep goes on. `p = 0` runs once,
/// since its skip set is never consulted.
pub fn ablate(base: &RunConfig, ps: &[f64], skip_sets: &[Vec<usize>], out: &Path) -> Result<Vec<AblationRow>> {
    create_dir(out)?;
    let mut cells = Vec::new();
    for &p in ps {
        if p == 0.0 {
            cells.push((p, skip_sets.first().cloned().unwrap_or_default()));
        } else {
            cells.extend(skip_sets.iter().map(|s| (p, s.clone())));
        }
    }
    let mut rows = Vec::new();
    for (i, (p, set)) in cells.into_iter().enumerate() {
        let set_text = set.iter().map(|s| s.to_string()).collect::<Vec<_>>().join(",");
        let mut run = base.clone();
        run.seed = Some(base.resolved_seed());
        run.synth.p = p;
        run.synth.skip_set = set;
        run.out = out.join(format!("cell_{i:02}"));
        info!("ablation cell {i}: p={p} skip_set={set_text}");
        let result = run.validate().and_then(|_| train(&run, None)).and_then(|o| {
            let c = Checkpoint::load(&o.checkpoint)?;
            let index = load_dataset(&run.data.root, Split::Test)?;
            let [_, _, h, w] = c.model.arch.input;
            let ev = evaluate_index(
                &c.model,
                &index,
                &run.disk_frames(h, w),
                &run.psnr_config(),
                run.score.batch,
            )?;
            ev.report.write_json(&run.out.join("report.json"))?;
            Ok((ev.report.auc, o.checkpoint))
        });
        let row = match result {
            Ok((auc, ckpt)) => AblationRow {
                p,
                skip_set: set_text,
                auc: Some(auc),
                error: None,
                checkpoint: ckpt.display().to_string(),
            },
            Err(e) => {
                error!("ablation cell {i} failed: {e}");
                AblationRow {
                    p,
                    skip_set: set_text,
                    auc: None,
                    error: Some(e.to_string()),
                    checkpoint: String::new(),
                }
            }
        };
        rows.push(row);
    }
    let path = out.join("ablation.csv");
    let mut w = csv::Writer::from_path(&path)?;
    for r in &rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    Ok(rows)
}

/// AUC of previously written per-video score files against labels.
pub fn auc_from_score_files(dir: &Path, data: &Path) -> Result<f64> {
    let index = load_dataset(data, Split::Test)?;
    let mut scores = Vec::new();
    let mut labels = Vec::new();
    for track in &index.labels {
        let s = ScoreSeries::read_csv(&track.video_id, &dir.join(format!("{}.csv", track.video_id)))?;
        scores.extend(s.anomaly);
        labels.extend(track.labels.iter().copied());
    }
    Ok(roc_auc(&scores, &labels)?.auc)
}
