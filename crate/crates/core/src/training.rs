//! Reconstruction training with pseudo anomalies.
//!
//! Normal clips contribute their mean squared reconstruction error `L_N`;
//! pseudo-anomaly clips contribute `L_P = -L_N`, so one gradient step pulls
//! normal reconstructions closer and pushes pseudo-anomaly reconstructions
//! away. A batch may mix both kinds; its loss is the mean of per-clip losses.

use std::fs::{self, File, OpenOptions};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::{info, warn};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::dataset::{load_dataset, sample_start_index, Clip, ClipSpec, DiskFrames, FrameCache, FrameSource, Split};
use crate::error::{Error, Result};
use crate::model::checkpoint::Checkpoint;
use crate::model::{Autoencoder, Real, Tensor5};
use crate::synthesizer::{plan_input, worker_rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Normal,
    Pseudo,
}

/// A signed per-clip loss: non-negative for normal clips, non-positive for
/// pseudo anomalies.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossValue {
    pub value: f64,
    pub kind: LossKind,
}

fn check_same_len(a: &[f32], b: &[f32]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::ShapeMismatch {
            expected: vec![a.len()],
            actual: vec![b.len()],
        });
    }
    Ok(())
}

fn mean_squared_error(x: &[f32], xhat: &[f32]) -> Result<f64> {
    check_same_len(x, xhat)?;
    if x.is_empty() {
        return Err(Error::EmptyInput("clip"));
    }
    let sum: f64 = x
        .iter()
        .zip(xhat)
        .map(|(a, b)| {
            let d = *b as f64 - *a as f64;
            d * d
        })
        .sum();
    Ok(sum / x.len() as f64)
}

/// `L_N`: squared Frobenius error summed over frames, divided by `T·C·H·W`.
pub fn loss_normal(x: &Clip, xhat: &[f32]) -> Result<f64> {
    mean_squared_error(x.data(), xhat)
}

/// `L_P = -L_N` on a pseudo-anomaly clip.
pub fn loss_pseudo(x: &Clip, xhat: &[f32]) -> Result<f64> {
    Ok(-mean_squared_error(x.data(), xhat)?)
}

/// Dispatches on the clip's provenance.
pub fn compute_loss(x: &Clip, xhat: &[f32]) -> Result<LossValue> {
    if x.is_pseudo() {
        Ok(LossValue {
            value: loss_pseudo(x, xhat)?,
            kind: LossKind::Pseudo,
        })
    } else {
        Ok(LossValue {
            value: loss_normal(x, xhat)?,
            kind: LossKind::Normal,
        })
    }
}

/// Mean of per-clip losses.
pub fn batch_loss(clips: &[Clip], recons: &[Vec<f32>]) -> Result<f64> {
    if clips.is_empty() || clips.len() != recons.len() {
        return Err(Error::EmptyInput("batch"));
    }
    let mut total = 0.0;
    for (c, r) in clips.iter().zip(recons) {
        total += compute_loss(c, r)?.value;
    }
    Ok(total / clips.len() as f64)
}

/// Batch objective on network tensors and its gradient with respect to the
/// reconstruction.
///
/// `signs[i]` is `+1` for a normal clip and `-1` for a pseudo anomaly. With a
/// margin `m`, a pseudo clip's loss is `max(-L_N, -m)`.
pub fn objective<F: Real>(
    input: &Tensor5<F>,
    output: &Tensor5<F>,
    signs: &[f64],
    margin: Option<f64>,
) -> (f64, Tensor5<F>) {
    assert_eq!(input.shape, output.shape);
    assert_eq!(signs.len(), input.batch());
    let n = input.batch() as f64;
    let len = input.sample_len();
    let mut grad = Tensor5::zeros(input.shape);
    let mut total = 0.0;
    for (i, &sign) in signs.iter().enumerate() {
        let x = input.sample(i);
        let y = output.sample(i);
        let mse = x
            .iter()
            .zip(y)
            .map(|(a, b)| (b.to_f64() - a.to_f64()).powi(2))
            .sum::<f64>()
            / len as f64;
        let clamped = sign < 0.0 && margin.is_some_and(|m| mse > m);
        total += if clamped {
            -margin.unwrap_or_default()
        } else {
            sign * mse
        };
        if !clamped {
            let k = F::from_f64(2.0 * sign / (n * len as f64));
            let g = &mut grad.data[i * len..(i + 1) * len];
            for ((d, a), b) in g.iter_mut().zip(x).zip(y) {
                *d = k * (*b - *a);
            }
        }
    }
    (total / n, grad)
}

/// Adam with bias correction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    pub m: Vec<Vec<f32>>,
    pub v: Vec<Vec<f32>>,
}

impl Adam {
    pub fn new(learning_rate: f64, beta1: f64, beta2: f64, eps: f64, shapes: &[usize]) -> Self {
        Self {
            learning_rate,
            beta1,
            beta2,
            eps,
            t: 0,
            m: shapes.iter().map(|n| vec![0.0; *n]).collect(),
            v: shapes.iter().map(|n| vec![0.0; *n]).collect(),
        }
    }

    pub fn for_model(model: &Autoencoder<f32>, cfg: &TrainConfig) -> Self {
        let shapes: Vec<usize> = model.parameters().iter().map(|p| p.len()).collect();
        Self::new(cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.adam_eps, &shapes)
    }

    pub fn step(&mut self, params: Vec<&mut [f32]>, grads: Vec<&[f32]>) {
        assert_eq!(params.len(), self.m.len(), "parameter tensor count");
        self.t += 1;
        let b1 = self.beta1 as f32;
        let b2 = self.beta2 as f32;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        let step_size = (self.learning_rate / bc1) as f32;
        let bc2_sqrt = bc2.sqrt() as f32;
        let eps = self.eps as f32;
        for (((p, g), m), v) in params.into_iter().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            for (((p, g), m), v) in p.iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                *p -= step_size * *m / (v.sqrt() / bc2_sqrt + eps);
            }
        }
    }
}

/// Everything the training loop needs; built from a [`RunConfig`].
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub steps: u64,
    pub seed: u64,
    pub clip_length: usize,
    /// `None` disables pseudo-anomaly synthesis entirely.
    pub synth: Option<crate::synthesizer::SynthConfig>,
    pub checkpoint_every: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub pseudo_margin: Option<f64>,
}

/// Outcome of one optimizer step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepReport {
    pub loss: f64,
    pub normal_count: usize,
    pub pseudo_count: usize,
}

/// Forward, signed loss, backward and one Adam update on `batch`.
pub fn train_step(
    model: &mut Autoencoder<f32>,
    opt: &mut Adam,
    batch: &[Clip],
    step: u64,
    margin: Option<f64>,
) -> Result<StepReport> {
    let x = model.batch_from_clips(batch)?;
    let signs: Vec<f64> = batch.iter().map(|c| if c.is_pseudo() { -1.0 } else { 1.0 }).collect();
    let (y, trace) = model.forward_train(x.clone())?;
    let (loss, dy) = objective(&x, &y, &signs, margin);
    if !loss.is_finite() {
        let provenance: Vec<String> = batch.iter().map(|c| describe_spec(c.spec())).collect();
        return Err(Error::NonFiniteLoss {
            step,
            detail: format!("loss={loss} clips=[{}]", provenance.join(" ")),
        });
    }
    let grads = model.backward(&trace, dy, false);
    let flat = grads.flat();
    opt.step(model.parameters_mut(), flat);
    let pseudo_count = signs.iter().filter(|s| **s < 0.0).count();
    Ok(StepReport {
        loss,
        normal_count: batch.len() - pseudo_count,
        pseudo_count,
    })
}

/// `video@n/s` provenance tag used in the journal.
pub fn describe_spec(spec: &ClipSpec) -> String {
    format!("{}@{}/{}", spec.video_id, spec.start, spec.stride)
}

/// One row of the append-only training journal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JournalRow {
    pub step: u64,
    pub loss: f64,
    pub normal_count: usize,
    pub pseudo_count: usize,
    pub fallback_count: usize,
    pub wall_ms: u64,
    pub clips: String,
}

pub fn read_journal(path: &Path) -> Result<Vec<JournalRow>> {
    let mut reader = csv::Reader::from_path(path)?;
    reader.deserialize().map(|r| r.map_err(Error::from)).collect()
}

struct Journal {
    writer: csv::Writer<BufWriter<File>>,
}

impl Journal {
    fn open(path: &Path, append: bool) -> Result<Self> {
        let exists = append && path.exists();
        let file = OpenOptions::new()
            .create(true)
            .write(true)
            .append(append)
            .truncate(!append)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        let writer = csv::WriterBuilder::new()
            .has_headers(!exists)
            .from_writer(BufWriter::new(file));
        Ok(Self { writer })
    }

    fn record(&mut self, row: &JournalRow) -> Result<()> {
        self.writer.serialize(row)?;
        Ok(())
    }

    fn flush(&mut self, path: &Path) -> Result<()> {
        self.writer.flush().map_err(|e| Error::io(path, e))
    }
}

/// Training state that survives a checkpoint round trip.
pub struct TrainState {
    pub model: Autoencoder<f32>,
    pub opt: Adam,
    pub step: u64,
    pub rng: ChaCha8Rng,
}

impl TrainState {
    pub fn fresh(run: &RunConfig) -> Result<Self> {
        let cfg = run.train_config()?;
        let model = Autoencoder::<f32>::new(run.architecture(), cfg.seed)?;
        let opt = Adam::for_model(&model, &cfg);
        Ok(Self {
            model,
            opt,
            step: 0,
            rng: worker_rng(cfg.seed, 1),
        })
    }

    pub fn checkpoint(&self, run: &RunConfig) -> Checkpoint {
        Checkpoint {
            model: self.model.clone(),
            optimizer: Some(self.opt.clone()),
            step: self.step,
            config: run.to_toml(),
            rng: Some(self.rng.clone()),
        }
    }

    pub fn from_checkpoint(ckpt: Checkpoint, run: &RunConfig) -> Result<Self> {
        let cfg = run.train_config()?;
        let mut opt = match ckpt.optimizer {
            Some(o) => o,
            None => Adam::for_model(&ckpt.model, &cfg),
        };
        opt.learning_rate = cfg.learning_rate;
        Ok(Self {
            rng: ckpt.rng.unwrap_or_else(|| worker_rng(cfg.seed, 1)),
            model: ckpt.model,
            opt,
            step: ckpt.step,
        })
    }
}

/// Draws one training batch: each slot picks a video uniformly, then a
/// normal or pseudo clip from it.
pub fn sample_batch(
    source: &dyn FrameSource,
    videos: &[crate::dataset::VideoMeta],
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(Vec<Clip>, usize)> {
    let mut clips = Vec::with_capacity(cfg.batch_size);
    let mut fallbacks = 0;
    for _ in 0..cfg.batch_size {
        let meta = &videos[rng.gen_range(0..videos.len())];
        let spec = match &cfg.synth {
            Some(synth) => {
                let plan = plan_input(meta, synth, cfg.clip_length, rng)?;
                fallbacks += plan.fell_back as usize;
                plan.spec
            }
            None => ClipSpec {
                video_id: meta.video_id.clone(),
                start: sample_start_index(meta, cfg.clip_length, 1, rng)?,
                stride: 1,
                length: cfg.clip_length,
            },
        };
        clips.push(Clip::assemble(source, meta, spec)?);
    }
    Ok((clips, fallbacks))
}

/// Paths produced by a training run.
#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub checkpoint: PathBuf,
    pub journal: PathBuf,
}

/// Runs the full loop described by `run`, writing checkpoints and the
/// journal under `run.out_dir()`.
pub fn train(run: &RunConfig, resume: Option<&Path>) -> Result<TrainOutput> {
    let cfg = run.train_config()?;
    let out = run.out_dir();
    let ckpt_dir = out.join("checkpoints");
    fs::create_dir_all(&ckpt_dir).map_err(|e| Error::io(&ckpt_dir, e))?;
    run.write_snapshot(&out.join("config.snapshot.toml"))?;

    let (index, frames) = training_frames(run)?;
    let mut cfg = cfg;
    if let Some(epochs) = run.train.epochs {
        cfg.steps = epochs_to_steps(epochs, index.total_frames(), cfg.clip_length, cfg.batch_size);
    }
    for v in &index.videos {
        if v.frame_count() < cfg.clip_length {
            return Err(Error::VideoTooShort {
                video_id: v.video_id.clone(),
                frame_count: v.frame_count(),
                required: cfg.clip_length,
            });
        }
    }

    let mut state = match resume {
        Some(path) => TrainState::from_checkpoint(Checkpoint::load(path)?, run)?,
        None => TrainState::fresh(run)?,
    };
    let journal_path = out.join("journal.csv");
    let mut journal = Journal::open(&journal_path, resume.is_some())?;
    let started = Instant::now();
    info!(
        "training {} steps (from step {}) on {} videos, batch {}, p={}",
        cfg.steps,
        state.step,
        index.videos.len(),
        cfg.batch_size,
        cfg.synth.as_ref().map_or(0.0, |s| s.p)
    );
    while state.step < cfg.steps {
        let (batch, fallbacks) = sample_batch(&frames, &index.videos, &cfg, &mut state.rng)?;
        let report = train_step(
            &mut state.model,
            &mut state.opt,
            &batch,
            state.step + 1,
            cfg.pseudo_margin,
        )?;
        state.step += 1;
        journal.record(&JournalRow {
            step: state.step,
            loss: report.loss,
            normal_count: report.normal_count,
            pseudo_count: report.pseudo_count,
            fallback_count: fallbacks,
            wall_ms: started.elapsed().as_millis() as u64,
            clips: batch
                .iter()
                .map(|c| describe_spec(c.spec()))
                .collect::<Vec<_>>()
                .join(" "),
        })?;
        if fallbacks > 0 {
            warn!(
                "step {}: {fallbacks} pseudo draw(s) fell back to normal clips",
                state.step
            );
        }
        if state.step % 100 == 0 {
            info!("step {} loss {:.6}", state.step, report.loss);
        }
        if cfg.checkpoint_every > 0 && state.step % cfg.checkpoint_every == 0 && state.step < cfg.steps {
            let path = ckpt_dir.join(format!("step_{:08}.ckpt", state.step));
            state.checkpoint(run).save(&path)?;
            journal.flush(&journal_path)?;
        }
    }
    journal.flush(&journal_path)?;
    let final_path = out.join("final.ckpt");
    state.checkpoint(run).save(&final_path)?;
    Ok(TrainOutput {
        checkpoint: final_path,
        journal: journal_path,
    })
}

/// `epochs · frames / (T · batch)`, at least one step.
pub fn epochs_to_steps(epochs: u64, total_frames: usize, clip_length: usize, batch_size: usize) -> u64 {
    (epochs * total_frames as u64 / (clip_length * batch_size) as u64).max(1)
}

/// Frame source used for training: disk frames cached in memory.
pub fn training_frames(run: &RunConfig) -> Result<(crate::dataset::DatasetIndex, FrameCache)> {
    let index = load_dataset(&run.data.root, Split::Train)?;
    let [_, _, h, w] = run.architecture().input;
    let disk: DiskFrames = run.disk_frames(h, w);
    let cache = FrameCache::load(&index, disk)?;
    Ok((index, cache))
}
