//! Run configuration: a human-readable TOML file of dotted keys
//! (`synth.p = 0.01`, `data.root = "bench"`, ...), overridden by
//! `--set key=value` flags. Unknown keys are rejected.
//!
//! Precedence, lowest first: built-in defaults, config file, flag overrides.
//! The global seed additionally falls back to `STEAL_SEED` when neither the
//! file nor a flag sets it.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataset::{DiskFrames, Interpolation};
use crate::error::{Error, Result};
use crate::model::{ladder, Architecture, Preset};
use crate::scoring::PsnrConfig;
use crate::synthesizer::SynthConfig;
use crate::training::TrainConfig;

pub const SEED_ENV: &str = "STEAL_SEED";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    #[serde(default = "default_root")]
    pub root: PathBuf,
    /// Frame height; defaults to the preset's.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub height: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub width: Option<usize>,
    #[serde(default)]
    pub interpolation: Interpolation,
}

fn default_root() -> PathBuf {
    PathBuf::from("data")
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            root: default_root(),
            height: None,
            width: None,
            interpolation: Interpolation::Bilinear,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    #[serde(default = "default_preset")]
    pub preset: Preset,
    /// Frames per clip `T`; defaults to the preset's.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clip_length: Option<usize>,
}

fn default_preset() -> Preset {
    Preset::Desk
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            preset: default_preset(),
            clip_length: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_steps")]
    pub steps: u64,
    /// When set, overrides `steps` with `epochs · total_frames / (T · batch)`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epochs: Option<u64>,
    #[serde(default = "default_ckpt_every")]
    pub checkpoint_every: u64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_adam_eps")]
    pub adam_eps: f64,
    /// Floor for the pseudo-anomaly loss, `max(-L_N, -m)`; off by default.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pseudo_margin: Option<f64>,
}

fn default_lr() -> f64 {
    1e-4
}
fn default_batch() -> usize {
    4
}
fn default_steps() -> u64 {
    2000
}
fn default_ckpt_every() -> u64 {
    1000
}
fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_adam_eps() -> f64 {
    1e-8
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            learning_rate: default_lr(),
            batch_size: default_batch(),
            steps: default_steps(),
            epochs: None,
            checkpoint_every: default_ckpt_every(),
            beta1: default_beta1(),
            beta2: default_beta2(),
            adam_eps: default_adam_eps(),
            pseudo_margin: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSection {
    /// `false` removes the synthesizer from the sampling path.
    #[serde(default = "default_true")]
    pub enabled: bool,
    #[serde(default = "default_skip_set")]
    pub skip_set: Vec<usize>,
    #[serde(default = "default_p")]
    pub p: f64,
}

fn default_skip_set() -> Vec<usize> {
    SynthConfig::default().skip_set
}

fn default_p() -> f64 {
    SynthConfig::default().p
}

impl SynthSection {
    pub fn params(&self) -> SynthConfig {
        SynthConfig {
            skip_set: self.skip_set.clone(),
            p: self.p,
        }
    }
}

fn default_true() -> bool {
    true
}

impl Default for SynthSection {
    fn default() -> Self {
        Self {
            enabled: true,
            skip_set: default_skip_set(),
            p: default_p(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoreSection {
    /// Window frame whose PSNR is scored; defaults to `T / 2`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_frame_offset: Option<usize>,
    #[serde(default = "default_peak")]
    pub peak: f64,
    #[serde(default = "default_psnr_eps")]
    pub eps: f64,
    /// Windows per forward pass.
    #[serde(default = "default_score_batch")]
    pub batch: usize,
}

fn default_peak() -> f64 {
    1.0
}
fn default_psnr_eps() -> f64 {
    1e-10
}
fn default_score_batch() -> usize {
    8
}

impl Default for ScoreSection {
    fn default() -> Self {
        Self {
            target_frame_offset: None,
            peak: default_peak(),
            eps: default_psnr_eps(),
            batch: default_score_batch(),
        }
    }
}

/// Merged configuration for one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    #[serde(default)]
    pub data: DataSection,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub synth: SynthSection,
    #[serde(default)]
    pub score: ScoreSection,
}

fn default_out() -> PathBuf {
    PathBuf::from("runs/default")
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: None,
            out: default_out(),
            data: DataSection::default(),
            model: ModelSection::default(),
            train: TrainSection::default(),
            synth: SynthSection::default(),
            score: ScoreSection::default(),
        }
    }
}

/// Splits `key=value`; the value is parsed as a TOML scalar or array, and
/// taken as a bare string otherwise.
fn parse_override(text: &str) -> Result<(Vec<String>, toml::Value)> {
    let (key, raw) = text
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override {text:?} is not key=value")))?;
    let key = key.trim();
    if key.is_empty() {
        return Err(Error::Config(format!("override {text:?} has an empty key")));
    }
    let raw = raw.trim();
    let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    Ok((key.split('.').map(str::to_string).collect(), value))
}

fn set_path(table: &mut toml::Table, path: &[String], value: toml::Value) -> Result<()> {
    let (last, parents) = path.split_last().expect("non-empty key");
    let mut cur = table;
    for p in parents {
        let entry = cur
            .entry(p.clone())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("{p} is not a section")))?;
    }
    cur.insert(last.clone(), value);
    Ok(())
}

impl RunConfig {
    /// Parses TOML text with overrides applied on top.
    pub fn from_toml_str(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        for o in overrides {
            let (path, value) = parse_override(o)?;
            set_path(&mut table, &path, value)?;
        }
        let cfg: RunConfig = table
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Loads `path` (or defaults when `None`) and applies overrides.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let text = match path {
            Some(p) => fs::read_to_string(p).map_err(|e| Error::io(p, e))?,
            None => String::new(),
        };
        Self::from_toml_str(&text, overrides)
    }

    pub fn validate(&self) -> Result<()> {
        if self.train.learning_rate < 0.0 || !self.train.learning_rate.is_finite() {
            return Err(Error::Config("train.learning_rate must be a finite value ≥ 0".into()));
        }
        if self.train.batch_size == 0 {
            return Err(Error::Config("train.batch_size must be ≥ 1".into()));
        }
        if self.score.batch == 0 {
            return Err(Error::Config("score.batch must be ≥ 1".into()));
        }
        if let Some(m) = self.train.pseudo_margin {
            if m.is_nan() || m <= 0.0 {
                return Err(Error::Config("train.pseudo_margin must be > 0".into()));
            }
        }
        self.synth.params().validate()?;
        self.architecture().validate()?;
        self.psnr_config().validate(self.clip_length())?;
        Ok(())
    }

    /// Seed from the config, else `STEAL_SEED`, else 0.
    pub fn resolved_seed(&self) -> u64 {
        self.seed
            .or_else(|| std::env::var(SEED_ENV).ok().and_then(|s| s.trim().parse().ok()))
            .unwrap_or(0)
    }

    pub fn out_dir(&self) -> PathBuf {
        self.out.clone()
    }

    pub fn clip_length(&self) -> usize {
        self.model
            .clip_length
            .unwrap_or_else(|| Architecture::preset(self.model.preset).input[0])
    }

    /// Preset layer ladder at the configured clip length and frame size.
    pub fn architecture(&self) -> Architecture {
        let base = Architecture::preset(self.model.preset);
        let [t, c, h, w] = base.input;
        let input = [
            self.model.clip_length.unwrap_or(t),
            c,
            self.data.height.unwrap_or(h),
            self.data.width.unwrap_or(w),
        ];
        if input == base.input {
            return base;
        }
        let channels: Vec<usize> = std::iter::once(c)
            .chain(base.layers.iter().take(base.layers.len() / 2).map(|l| l.out_channels))
            .collect();
        ladder(self.model.preset.as_str(), input, &channels)
    }

    pub fn disk_frames(&self, height: usize, width: usize) -> DiskFrames {
        DiskFrames {
            height,
            width,
            interpolation: self.data.interpolation,
        }
    }

    pub fn psnr_config(&self) -> PsnrConfig {
        PsnrConfig {
            peak: self.score.peak,
            eps: self.score.eps,
            target_frame_offset: self.score.target_frame_offset.unwrap_or(self.clip_length() / 2),
        }
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        self.validate()?;
        Ok(TrainConfig {
            learning_rate: self.train.learning_rate,
            batch_size: self.train.batch_size,
            steps: self.train.steps,
            seed: self.resolved_seed(),
            clip_length: self.clip_length(),
            synth: self.synth.enabled.then(|| self.synth.params()),
            checkpoint_every: self.train.checkpoint_every,
            beta1: self.train.beta1,
            beta2: self.train.beta2,
            adam_eps: self.train.adam_eps,
            pseudo_margin: self.train.pseudo_margin,
        })
    }

    /// Frozen snapshot with the seed resolved, so re-running it reproduces
    /// the run even without `STEAL_SEED`.
    pub fn to_toml(&self) -> String {
        let mut frozen = self.clone();
        frozen.seed = Some(self.resolved_seed());
        toml::to_string(&frozen).expect("config serializes")
    }

    pub fn write_snapshot(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        fs::write(path, self.to_toml()).map_err(|e| Error::io(path, e))
    }
}
