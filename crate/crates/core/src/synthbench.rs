//! Procedural moving-sprite videos. Normal videos move every sprite at
//! `v` pixels per frame; anomalous test videos move them at `k·v` inside one
//! labelled interval.
//!
//! Each axis bounces off the walls: when the next step would leave the
//! allowed range, that velocity component flips before the move, so the
//! per-frame displacement is always exactly the current speed.
//!
//! Every frame also carries Gaussian sensor noise whose standard deviation
//! drifts slowly along the video (piecewise linear between random knots).
//! The noise is the same in normal and anomalous stretches, so it only adds
//! reconstruction error that is unrelated to motion.

use std::fs;
use std::path::{Path, PathBuf};

use image::{GrayImage, Luma};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{LabelTrack, Split, LABELS_DIR};
use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchConfig {
    pub height: usize,
    pub width: usize,
    pub min_sprites: usize,
    pub max_sprites: usize,
    /// Sprite half-extent range in pixels.
    pub min_radius: usize,
    pub max_radius: usize,
    /// Normal speed in pixels per frame.
    pub speed: usize,
    /// Speed multiplier inside anomaly intervals.
    pub anomaly_multiplier: usize,
    pub train_videos: usize,
    pub test_videos: usize,
    pub frames: usize,
    pub anomaly_length: usize,
    pub background: u8,
    /// Upper bound of the noise standard deviation, in gray levels.
    pub noise_max: f64,
    /// Frames between noise-level knots.
    pub noise_knot: usize,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            height: 64,
            width: 64,
            min_sprites: 1,
            max_sprites: 3,
            min_radius: 4,
            max_radius: 7,
            speed: 1,
            anomaly_multiplier: 4,
            train_videos: 10,
            test_videos: 6,
            frames: 512,
            anomaly_length: 120,
            background: 32,
            noise_max: 28.0,
            noise_knot: 64,
            seed: 0,
        }
    }
}

impl BenchConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("synth: {m}")));
        if self.anomaly_multiplier < 2 {
            return bad("anomaly_multiplier must be >= 2");
        }
        if self.speed == 0 {
            return bad("speed must be >= 1");
        }
        if self.min_sprites == 0 || self.min_sprites > self.max_sprites {
            return bad("need 1 <= min_sprites <= max_sprites");
        }
        if self.min_radius == 0 || self.min_radius > self.max_radius {
            return bad("need 1 <= min_radius <= max_radius");
        }
        let span = self.height.min(self.width) as isize - 2 * self.max_radius as isize - 1;
        if span < (self.speed * self.anomaly_multiplier) as isize {
            return bad("frame too small for sprite size and anomaly speed");
        }
        if !(self.noise_max >= 0.0 && self.noise_max.is_finite()) || self.noise_knot == 0 {
            return bad("need noise_max >= 0 and noise_knot >= 1");
        }
        if self.frames < 2 || self.train_videos == 0 {
            return bad("need at least one training video with two frames");
        }
        if self.test_videos > 0 && (self.anomaly_length == 0 || self.anomaly_length + 2 > self.frames) {
            return Err(Error::OutOfRange(format!(
                "anomaly interval of {} frames does not fit in {} frames",
                self.anomaly_length, self.frames
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Shape {
    Rect,
    Disc,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sprite {
    pub shape: Shape,
    /// Half extents `(ry, rx)`; a disc uses `ry == rx`.
    pub radius: (usize, usize),
    pub intensity: u8,
    /// Center of the first frame, `(y, x)`.
    pub start: (isize, isize),
    /// Unit direction per axis, each in `{-1, 0, 1}`, not both zero.
    pub direction: (isize, isize),
}

/// Everything needed to render one video.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoSpec {
    pub split: String,
    pub video_id: String,
    pub seed: u64,
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub background: u8,
    pub speed: usize,
    pub multiplier: usize,
    pub sprites: Vec<Sprite>,
    /// 1-based inclusive `[a, b]`; frames whose motion into them is fast.
    pub anomaly: Option<(usize, usize)>,
    /// Noise standard deviation at frames `1, 1 + knot, 1 + 2·knot, ...`.
    pub noise_levels: Vec<f64>,
    pub noise_knot: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config: BenchConfig,
    pub videos: Vec<VideoSpec>,
}

fn video_seed(seed: u64, stream: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng.next_u64()
}

fn random_sprites(cfg: &BenchConfig, rng: &mut ChaCha8Rng) -> Vec<Sprite> {
    let count = rng.gen_range(cfg.min_sprites..=cfg.max_sprites);
    (0..count)
        .map(|_| {
            let shape = if rng.gen_bool(0.5) { Shape::Rect } else { Shape::Disc };
            let ry = rng.gen_range(cfg.min_radius..=cfg.max_radius);
            let rx = match shape {
                Shape::Rect => rng.gen_range(cfg.min_radius..=cfg.max_radius),
                Shape::Disc => ry,
            };
            let intensity = rng.gen_range(160..=255u8);
            let start = (
                rng.gen_range(ry as isize..=(cfg.height - 1 - ry) as isize),
                rng.gen_range(rx as isize..=(cfg.width - 1 - rx) as isize),
            );
            let direction = loop {
                let d = (rng.gen_range(-1..=1isize), rng.gen_range(-1..=1isize));
                if d != (0, 0) {
                    break d;
                }
            };
            Sprite {
                shape,
                radius: (ry, rx),
                intensity,
                start,
                direction,
            }
        })
        .collect()
}

fn plan_video(cfg: &BenchConfig, split: Split, index: usize, anomalous: bool) -> VideoSpec {
    let stream = match split {
        Split::Train => index as u64,
        Split::Test => (1 << 32) + index as u64,
    };
    let seed = video_seed(cfg.seed, stream);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sprites = random_sprites(cfg, &mut rng);
    let anomaly = anomalous.then(|| {
        // Leave at least one normal frame on each side.
        let a = rng.gen_range(2..=cfg.frames - cfg.anomaly_length);
        (a, a + cfg.anomaly_length - 1)
    });
    let knots = (cfg.frames - 1) / cfg.noise_knot + 2;
    let noise_levels = (0..knots).map(|_| rng.gen::<f64>() * cfg.noise_max).collect();
    VideoSpec {
        split: split.dir_name().to_string(),
        video_id: format!("{:02}", index + 1),
        seed,
        frames: cfg.frames,
        height: cfg.height,
        width: cfg.width,
        background: cfg.background,
        speed: cfg.speed,
        multiplier: cfg.anomaly_multiplier,
        sprites,
        anomaly,
        noise_levels,
        noise_knot: cfg.noise_knot,
    }
}

/// Per-frame speed multiplier for frame `t` (1-based).
fn multiplier_at(spec: &VideoSpec, t: usize) -> usize {
    match spec.anomaly {
        Some((a, b)) if (a..=b).contains(&t) => spec.multiplier,
        _ => 1,
    }
}

/// Sprite centers `(y, x)` for every frame.
pub fn trajectory(spec: &VideoSpec, sprite: &Sprite) -> Vec<(isize, isize)> {
    let lo = (sprite.radius.0 as isize, sprite.radius.1 as isize);
    let hi = (
        (spec.height - 1 - sprite.radius.0) as isize,
        (spec.width - 1 - sprite.radius.1) as isize,
    );
    let step = |p: &mut isize, d: &mut isize, lo: isize, hi: isize, len: isize| {
        if *p + *d * len > hi || *p + *d * len < lo {
            *d = -*d;
        }
        *p += *d * len;
    };
    let mut pos = sprite.start;
    let mut dir = sprite.direction;
    let mut out = Vec::with_capacity(spec.frames);
    out.push(pos);
    for t in 2..=spec.frames {
        let len = (spec.speed * multiplier_at(spec, t)) as isize;
        step(&mut pos.0, &mut dir.0, lo.0, hi.0, len);
        step(&mut pos.1, &mut dir.1, lo.1, hi.1, len);
        out.push(pos);
    }
    out
}

fn draw(img: &mut GrayImage, sprite: &Sprite, center: (isize, isize)) {
    let (ry, rx) = (sprite.radius.0 as isize, sprite.radius.1 as isize);
    for y in center.0 - ry..=center.0 + ry {
        for x in center.1 - rx..=center.1 + rx {
            let inside = match sprite.shape {
                Shape::Rect => true,
                Shape::Disc => {
                    let (dy, dx) = (y - center.0, x - center.1);
                    dy * dy + dx * dx <= ry * ry
                }
            };
            if inside && y >= 0 && x >= 0 && (y as u32) < img.height() && (x as u32) < img.width() {
                img.put_pixel(x as u32, y as u32, Luma([sprite.intensity]));
            }
        }
    }
}

/// Noise standard deviation of frame `t` (0-based).
pub fn noise_level(spec: &VideoSpec, t: usize) -> f64 {
    if spec.noise_levels.is_empty() {
        return 0.0;
    }
    let k = spec.noise_knot.max(1);
    let (i, frac) = (t / k, (t % k) as f64 / k as f64);
    let a = spec.noise_levels[i.min(spec.noise_levels.len() - 1)];
    let b = spec.noise_levels[(i + 1).min(spec.noise_levels.len() - 1)];
    a + (b - a) * frac
}

/// Rendered frames in order.
pub fn render(spec: &VideoSpec) -> Vec<GrayImage> {
    let paths: Vec<_> = spec.sprites.iter().map(|s| trajectory(spec, s)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(1);
    (0..spec.frames)
        .map(|t| {
            let mut img = GrayImage::from_pixel(spec.width as u32, spec.height as u32, Luma([spec.background]));
            for (s, path) in spec.sprites.iter().zip(&paths) {
                draw(&mut img, s, path[t]);
            }
            let sigma = noise_level(spec, t);
            if sigma > 0.0 {
                for px in img.pixels_mut() {
                    let z: f64 = rng.sample(StandardNormal);
                    px.0[0] = (px.0[0] as f64 + sigma * z).round().clamp(0.0, 255.0) as u8;
                }
            }
            img
        })
        .collect()
}

/// Ground truth of a test video.
pub fn labels(spec: &VideoSpec) -> LabelTrack {
    LabelTrack {
        video_id: spec.video_id.clone(),
        labels: (1..=spec.frames).map(|t| (multiplier_at(spec, t) > 1) as u8).collect(),
    }
}

/// Writes the frames of `spec` under `root/<split>/<id>/` and, for anomalous
/// videos, `root/test_labels/<id>.txt`.
pub fn write_video(root: &Path, spec: &VideoSpec) -> Result<PathBuf> {
    let dir = root.join(&spec.split).join(&spec.video_id);
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    for (i, img) in render(spec).iter().enumerate() {
        let path = dir.join(format!("{:06}.png", i + 1));
        img.save(&path).map_err(|e| Error::Image { path, source: e })?;
    }
    if spec.anomaly.is_some() {
        if spec.split != Split::Test.dir_name() {
            return Err(Error::Config("anomalous video outside the test split".into()));
        }
        let label_dir = root.join(LABELS_DIR);
        fs::create_dir_all(&label_dir).map_err(|e| Error::io(&label_dir, e))?;
        labels(spec).write(&label_dir.join(format!("{}.txt", spec.video_id)))?;
    }
    Ok(dir)
}

/// A normal video (no anomaly interval).
pub fn gen_normal_video(cfg: &BenchConfig, index: usize, root: &Path) -> Result<VideoSpec> {
    cfg.validate()?;
    let spec = plan_video(cfg, Split::Train, index, false);
    write_video(root, &spec)?;
    Ok(spec)
}

/// A test video with one fast interval, plus its labels.
pub fn gen_anomalous_video(cfg: &BenchConfig, index: usize, root: &Path) -> Result<(VideoSpec, LabelTrack)> {
    cfg.validate()?;
    let spec = plan_video(cfg, Split::Test, index, true);
    write_video(root, &spec)?;
    let track = labels(&spec);
    Ok((spec, track))
}

/// Plans every video of the benchmark without writing anything.
pub fn plan(cfg: &BenchConfig) -> Result<Manifest> {
    cfg.validate()?;
    let mut videos: Vec<VideoSpec> = (0..cfg.train_videos)
        .map(|i| plan_video(cfg, Split::Train, i, false))
        .collect();
    videos.extend((0..cfg.test_videos).map(|i| plan_video(cfg, Split::Test, i, true)));
    Ok(Manifest {
        config: cfg.clone(),
        videos,
    })
}

/// Renders all videos of `manifest` under `root` and writes the manifest.
pub fn write_manifest_dataset(manifest: &Manifest, root: &Path) -> Result<()> {
    fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    manifest
        .videos
        .par_iter()
        .try_for_each(|v| write_video(root, v).map(|_| ()))?;
    let path = root.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(manifest)?;
    fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
}

/// Generates the full benchmark under `root`.
pub fn build_benchmark(cfg: &BenchConfig, root: &Path) -> Result<Manifest> {
    let manifest = plan(cfg)?;
    write_manifest_dataset(&manifest, root)?;
    Ok(manifest)
}

pub fn read_manifest(path: &Path) -> Result<Manifest> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

/// Re-renders a dataset from a manifest written by [`build_benchmark`].
pub fn regenerate(manifest_path: &Path, root: &Path) -> Result<Manifest> {
    let manifest = read_manifest(manifest_path)?;
    write_manifest_dataset(&manifest, root)?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> BenchConfig {
        BenchConfig {
            frames: 300,
            train_videos: 2,
            test_videos: 2,
            anomaly_length: 50,
            ..BenchConfig::default()
        }
    }

    #[test]
    fn normal_motion_has_unit_displacement_and_stays_inside() {
        let cfg = BenchConfig::default();
        for i in 0..5 {
            let spec = plan_video(&cfg, Split::Train, i, false);
            for s in &spec.sprites {
                let path = trajectory(&spec, s);
                assert_eq!(path.len(), 512);
                for w in path.windows(2) {
                    let d = ((w[1].0 - w[0].0).abs()).max((w[1].1 - w[0].1).abs());
                    assert_eq!(d, 1);
                }
                for p in path {
                    assert!(p.0 >= 0 && p.0 < 64 && p.1 >= 0 && p.1 < 64);
                }
            }
        }
    }

    #[test]
    fn anomaly_interval_moves_k_times_faster() {
        let cfg = BenchConfig::default();
        let mut spec = plan_video(&cfg, Split::Test, 0, true);
        spec.anomaly = Some((200, 300));
        let track = labels(&spec);
        assert_eq!(track.labels.iter().filter(|l| **l == 1).count(), 101);
        assert!((1..=512).all(|t| (track.labels[t - 1] == 1) == (200..=300).contains(&t)));
        for s in &spec.sprites {
            let path = trajectory(&spec, s);
            for t in 2..=512 {
                let (a, b) = (path[t - 2], path[t - 1]);
                let d = (b.0 - a.0).abs().max((b.1 - a.1).abs());
                assert_eq!(d, if (200..=300).contains(&t) { 4 } else { 1 }, "t={t}");
            }
        }
    }

    #[test]
    fn planning_is_deterministic_and_seed_dependent() {
        let a = plan(&small()).unwrap();
        assert_eq!(a, plan(&small()).unwrap());
        let b = plan(&BenchConfig { seed: 1, ..small() }).unwrap();
        assert_ne!(a, b);
        assert!(a.videos.iter().all(|v| (v.split == "train") == v.anomaly.is_none()));
    }

    #[test]
    fn validation() {
        assert!(BenchConfig {
            anomaly_multiplier: 1,
            ..small()
        }
        .validate()
        .is_err());
        assert!(BenchConfig {
            anomaly_length: 299,
            ..small()
        }
        .validate()
        .is_err());
        assert!(BenchConfig { width: 16, ..small() }.validate().is_err());
        assert!(BenchConfig {
            noise_max: -1.0,
            ..small()
        }
        .validate()
        .is_err());
    }

    #[test]
    fn noise_level_interpolates_between_knots() {
        let mut spec = plan_video(&small(), Split::Train, 0, false);
        spec.noise_knot = 4;
        spec.noise_levels = vec![0.0, 8.0, 4.0];
        let levels: Vec<f64> = (0..9).map(|t| noise_level(&spec, t)).collect();
        assert_eq!(levels, vec![0.0, 2.0, 4.0, 6.0, 8.0, 7.0, 6.0, 5.0, 4.0]);
        let spec = plan_video(&small(), Split::Test, 1, true);
        assert!((0..300).all(|t| (0.0..=28.0).contains(&noise_level(&spec, t))));
    }
}
