//! Frame-level anomaly scores from reconstruction quality.
//!
//! Every stride-1 window of `T` test frames is reconstructed and the PSNR of
//! one fixed frame of the window (`target_frame_offset`, the middle frame
//! by default) is recorded for that frame. Per video, PSNRs are min-max
//! normalized to a quality `Q ∈ [0, 1]` and the anomaly score is `1 - Q`.

use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{Clip, ClipSpec, Frame, FrameSource, VideoMeta};
use crate::error::{Error, Result};
use crate::model::{batch_sample_to_tchw, Autoencoder};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PsnrConfig {
    /// Peak signal in the rescaled `[0, 1]` domain.
    pub peak: f64,
    /// Added to the MSE so a perfect reconstruction scores a finite 100 dB.
    pub eps: f64,
    pub target_frame_offset: usize,
}

impl PsnrConfig {
    /// Defaults for clips of `length` frames (middle frame scored).
    pub fn for_length(length: usize) -> Self {
        Self {
            peak: 1.0,
            eps: 1e-10,
            target_frame_offset: length / 2,
        }
    }

    pub fn validate(&self, length: usize) -> Result<()> {
        if self.peak.is_nan() || self.peak <= 0.0 || self.eps.is_nan() || self.eps <= 0.0 {
            return Err(Error::Config("score.peak and score.eps must be > 0".into()));
        }
        if self.target_frame_offset >= length {
            return Err(Error::Config(format!(
                "score.target_frame_offset {} must be < clip length {length}",
                self.target_frame_offset
            )));
        }
        Ok(())
    }
}

fn check_frames(a: &[f32], b: &[f32]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::ShapeMismatch {
            expected: vec![a.len()],
            actual: vec![b.len()],
        });
    }
    if a.is_empty() {
        return Err(Error::EmptyInput("frame"));
    }
    Ok(())
}

/// PSNR in dB of `reconstruction` against `original`, both in `[-1, 1]`,
/// after mapping to `[0, 1]`.
pub fn psnr_values(original: &[f32], reconstruction: &[f32], cfg: &PsnrConfig) -> Result<f64> {
    check_frames(original, reconstruction)?;
    let sum: f64 = original
        .iter()
        .zip(reconstruction)
        .map(|(a, b)| {
            let d = (*b as f64 + 1.0) / 2.0 - (*a as f64 + 1.0) / 2.0;
            d * d
        })
        .sum();
    let mse = sum / original.len() as f64;
    Ok(10.0 * (cfg.peak * cfg.peak / (mse + cfg.eps)).log10())
}

pub fn psnr(original: &Frame, reconstruction: &Frame, cfg: &PsnrConfig) -> Result<f64> {
    if (original.height, original.width) != (reconstruction.height, reconstruction.width) {
        return Err(Error::ShapeMismatch {
            expected: vec![original.height, original.width],
            actual: vec![reconstruction.height, reconstruction.width],
        });
    }
    psnr_values(&original.pixels, &reconstruction.pixels, cfg)
}

/// `(x - min) / (max - min)`; a constant series maps to 0.5 everywhere.
pub fn minmax_normalize(values: &[f64]) -> Result<Vec<f64>> {
    if values.is_empty() {
        return Err(Error::EmptyInput("score series"));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::OutOfRange("non-finite value in score series".into()));
    }
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == min {
        return Ok(vec![0.5; values.len()]);
    }
    let range = max - min;
    Ok(values.iter().map(|v| (v - min) / range).collect())
}

/// `A = 1 - Q`.
pub fn anomaly_scores(quality: &[f64]) -> Result<Vec<f64>> {
    if let Some(bad) = quality.iter().find(|q| !(0.0..=1.0).contains(*q)) {
        return Err(Error::OutOfRange(format!("quality {bad} outside [0, 1]")));
    }
    Ok(quality.iter().map(|q| 1.0 - q).collect())
}

/// Per-frame scores of one test video.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreSeries {
    pub video_id: String,
    /// PSNR per frame in dB, `psnr[k - 1]` for `I_k`.
    pub psnr: Vec<f64>,
    pub quality: Vec<f64>,
    pub anomaly: Vec<f64>,
    /// `true` where the frame was the scored frame of some window; other
    /// frames copy their nearest scored neighbour.
    pub direct: Vec<bool>,
}

impl ScoreSeries {
    /// Normalizes a full PSNR series.
    pub fn from_psnr(video_id: &str, psnr: Vec<f64>, direct: Vec<bool>) -> Result<Self> {
        let quality = minmax_normalize(&psnr)?;
        let anomaly = anomaly_scores(&quality)?;
        Ok(Self {
            video_id: video_id.to_string(),
            psnr,
            quality,
            anomaly,
            direct,
        })
    }

    pub fn len(&self) -> usize {
        self.psnr.len()
    }

    pub fn is_empty(&self) -> bool {
        self.psnr.is_empty()
    }

    /// CSV with columns `frame,psnr,Q,A,direct_flag` (1-based frames).
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["frame", "psnr", "Q", "A", "direct_flag"])?;
        for k in 0..self.len() {
            w.write_record([
                (k + 1).to_string(),
                self.psnr[k].to_string(),
                self.quality[k].to_string(),
                self.anomaly[k].to_string(),
                u8::from(self.direct[k]).to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(video_id: &str, path: &Path) -> Result<Self> {
        #[derive(Deserialize)]
        struct Row {
            psnr: f64,
            #[serde(rename = "Q")]
            q: f64,
            #[serde(rename = "A")]
            a: f64,
            direct_flag: u8,
        }
        let mut out = Self {
            video_id: video_id.to_string(),
            psnr: Vec::new(),
            quality: Vec::new(),
            anomaly: Vec::new(),
            direct: Vec::new(),
        };
        for row in csv::Reader::from_path(path)?.deserialize::<Row>() {
            let row = row?;
            out.psnr.push(row.psnr);
            out.quality.push(row.q);
            out.anomaly.push(row.a);
            out.direct.push(row.direct_flag != 0);
        }
        Ok(out)
    }
}

/// Fills frames without a window score from the nearest scored frame.
///
/// `direct_psnr[j]` is the score of frame `j + 1 + offset`.
pub fn expand_window_scores(direct_psnr: &[f64], frame_count: usize, offset: usize) -> (Vec<f64>, Vec<bool>) {
    let first = offset;
    let last = offset + direct_psnr.len() - 1;
    let mut psnr = Vec::with_capacity(frame_count);
    let mut direct = Vec::with_capacity(frame_count);
    for k in 0..frame_count {
        let j = k.clamp(first, last) - first;
        psnr.push(direct_psnr[j]);
        direct.push((first..=last).contains(&k));
    }
    (psnr, direct)
}

/// Reconstructions of each window's scored frame, in window order.
pub struct WindowOutputs {
    pub psnr: Vec<f64>,
    /// Present only when requested.
    pub reconstructions: Vec<Vec<f32>>,
}

fn window_spec(meta: &VideoMeta, start: usize, length: usize) -> ClipSpec {
    ClipSpec {
        video_id: meta.video_id.clone(),
        start,
        stride: 1,
        length,
    }
}

/// PSNR of the scored frame of every stride-1 window of `meta`.
pub fn score_windows(
    model: &Autoencoder<f32>,
    source: &dyn FrameSource,
    meta: &VideoMeta,
    cfg: &PsnrConfig,
    batch: usize,
    keep_reconstructions: bool,
) -> Result<WindowOutputs> {
    let length = model.arch.input[0];
    cfg.validate(length)?;
    let k = meta.frame_count();
    if k < length {
        return Err(Error::VideoTooShort {
            video_id: meta.video_id.clone(),
            frame_count: k,
            required: length,
        });
    }
    let starts: Vec<usize> = (1..=k + 1 - length).collect();
    let mut out = WindowOutputs {
        psnr: Vec::with_capacity(starts.len()),
        reconstructions: Vec::new(),
    };
    let offset = cfg.target_frame_offset;
    for chunk in starts.chunks(batch.max(1)) {
        let clips = chunk
            .par_iter()
            .map(|&n| Clip::assemble(source, meta, window_spec(meta, n, length)))
            .collect::<Result<Vec<_>>>()?;
        let x = model.batch_from_clips(&clips)?;
        let y = model.forward(&x)?;
        for (i, clip) in clips.iter().enumerate() {
            let recon = batch_sample_to_tchw(&y, i);
            let frame_len = recon.len() / length;
            let target = &recon[offset * frame_len..(offset + 1) * frame_len];
            out.psnr.push(psnr_values(clip.frame(offset), target, cfg)?);
            if keep_reconstructions {
                out.reconstructions.push(target.to_vec());
            }
        }
    }
    Ok(out)
}

/// Scores every frame of a test video.
pub fn score_video(
    model: &Autoencoder<f32>,
    source: &dyn FrameSource,
    meta: &VideoMeta,
    cfg: &PsnrConfig,
    batch: usize,
) -> Result<ScoreSeries> {
    let windows = score_windows(model, source, meta, cfg, batch, false)?;
    let (psnr, direct) = expand_window_scores(&windows.psnr, meta.frame_count(), cfg.target_frame_offset);
    ScoreSeries::from_psnr(&meta.video_id, psnr, direct)
}

/// Per-pixel squared error, min-max normalized to `[0, 1]` (0.5 everywhere
/// when the error is constant).
pub fn error_heatmap(original: &[f32], reconstruction: &[f32]) -> Result<Vec<f64>> {
    check_frames(original, reconstruction)?;
    let sq: Vec<f64> = original
        .iter()
        .zip(reconstruction)
        .map(|(a, b)| (*b as f64 - *a as f64).powi(2))
        .collect();
    minmax_normalize(&sq)
}

/// Writes a heatmap as an 8-bit grayscale PNG.
pub fn write_heatmap_png(path: &Path, heat: &[f64], height: usize, width: usize) -> Result<()> {
    let bytes: Vec<u8> = heat.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
    let img = image::GrayImage::from_raw(width as u32, height as u32, bytes).ok_or(Error::ShapeMismatch {
        expected: vec![height, width],
        actual: vec![heat.len()],
    })?;
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    img.save(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}
