//! Temporal pseudo anomalies: clips that skip `s > 1` frames between
//! samples so normal motion looks `s` times faster, and the per-sample coin
//! flip that decides whether a training input is such a clip.

use log::debug;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{required_frames, sample_start_index, Clip, ClipSpec, FrameSource, VideoMeta};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    /// Candidate skip values, each > 1.
    #[serde(default = "default_skip_set")]
    pub skip_set: Vec<usize>,
    /// Probability that a training input is a pseudo anomaly.
    #[serde(default = "default_p")]
    pub p: f64,
}

fn default_skip_set() -> Vec<usize> {
    vec![2, 3, 4, 5]
}

fn default_p() -> f64 {
    0.01
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            skip_set: default_skip_set(),
            p: default_p(),
        }
    }
}

impl SynthConfig {
    pub fn new(skip_set: Vec<usize>, p: f64) -> Result<Self> {
        let cfg = Self { skip_set, p };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.p) {
            return Err(Error::Config(format!("synth.p must lie in [0, 1], got {}", self.p)));
        }
        if let Some(bad) = self.skip_set.iter().find(|s| **s <= 1) {
            return Err(Error::Config(format!("synth.skip_set values must be > 1, got {bad}")));
        }
        if self.p > 0.0 && self.skip_set.is_empty() {
            return Err(Error::Config("synth.skip_set is empty".into()));
        }
        Ok(())
    }
}

/// Skip value drawn uniformly from `skip_set`.
pub fn draw_skip(skip_set: &[usize], rng: &mut impl Rng) -> Result<usize> {
    if skip_set.is_empty() {
        return Err(Error::EmptySkipSet);
    }
    Ok(skip_set[rng.gen_range(0..skip_set.len())])
}

/// Pseudo-anomaly clip `(I_n, I_{n+s}, ..., I_{n+(T-1)s})`.
pub fn sample_pseudo_clip(
    source: &dyn FrameSource,
    meta: &VideoMeta,
    n: usize,
    skip: usize,
    length: usize,
) -> Result<Clip> {
    if skip <= 1 {
        return Err(Error::InvalidSkip(skip));
    }
    Clip::assemble(
        source,
        meta,
        ClipSpec {
            video_id: meta.video_id.clone(),
            start: n,
            stride: skip,
            length,
        },
    )
}

/// A training input and whether a pseudo draw had to fall back to a normal
/// clip because no skip value fit the video.
#[derive(Debug, Clone)]
pub struct Selection {
    pub clip: Clip,
    pub fell_back: bool,
}

/// Branch and indices of one input selection, without touching frames.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SelectionPlan {
    pub spec: ClipSpec,
    pub fell_back: bool,
}

/// Decides `(branch, s, n)` for one input.
///
/// With probability `p` a pseudo clip is planned: `s` is drawn uniformly
/// from the skip values the video is long enough for, then `n` uniformly
/// from the feasible starts. Otherwise, or when no skip fits, a normal clip.
/// When `p == 0` no coin is flipped, so the random stream matches plain
/// normal-clip sampling exactly.
pub fn plan_input(meta: &VideoMeta, cfg: &SynthConfig, length: usize, rng: &mut impl Rng) -> Result<SelectionPlan> {
    let pseudo = cfg.p > 0.0 && rng.gen_bool(cfg.p);
    let mut fell_back = false;
    if pseudo {
        let feasible: Vec<usize> = cfg
            .skip_set
            .iter()
            .copied()
            .filter(|s| meta.frame_count() >= required_frames(length, *s))
            .collect();
        if feasible.is_empty() {
            debug!(
                "video {} too short for any skip value; using a normal clip",
                meta.video_id
            );
            fell_back = true;
        } else {
            let stride = draw_skip(&feasible, rng)?;
            let start = sample_start_index(meta, length, stride, rng)?;
            return Ok(SelectionPlan {
                spec: ClipSpec {
                    video_id: meta.video_id.clone(),
                    start,
                    stride,
                    length,
                },
                fell_back,
            });
        }
    }
    let start = sample_start_index(meta, length, 1, rng)?;
    Ok(SelectionPlan {
        spec: ClipSpec {
            video_id: meta.video_id.clone(),
            start,
            stride: 1,
            length,
        },
        fell_back,
    })
}

/// Normal clip with probability `1 - p`, pseudo clip with probability `p`.
pub fn select_input(
    source: &dyn FrameSource,
    meta: &VideoMeta,
    cfg: &SynthConfig,
    length: usize,
    rng: &mut impl Rng,
) -> Result<Selection> {
    let plan = plan_input(meta, cfg, length, rng)?;
    Ok(Selection {
        clip: Clip::assemble(source, meta, plan.spec)?,
        fell_back: plan.fell_back,
    })
}

/// Independent random stream for a sampling worker.
pub fn worker_rng(global_seed: u64, worker_id: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(global_seed ^ worker_id)
}
