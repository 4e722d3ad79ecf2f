//! Frame-level ROC AUC over a whole test set.
//!
//! Scores of all videos (each normalized within its own video) are
//! concatenated and a single threshold sweep produces the ROC curve. Ties
//! are swept together, which gives them half credit, so the area equals
//! `P(score_pos > score_neg) + ½·P(score_pos = score_neg)`.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{load_dataset, DatasetIndex, DiskFrames, FrameSource, Split};
use crate::error::{Error, Result};
use crate::model::Autoencoder;
use crate::scoring::{score_video, PsnrConfig, ScoreSeries};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub fpr: f64,
    pub tpr: f64,
    /// Scores `>= threshold` are called anomalous at this point.
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoAuc {
    pub video_id: String,
    /// `None` when the video has a single class.
    pub auc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub auc: f64,
    pub roc: Vec<RocPoint>,
    #[serde(default)]
    pub per_video: Vec<VideoAuc>,
}

/// Concatenated scores with their ground truth.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LabeledScores {
    pub scores: Vec<f64>,
    pub labels: Vec<u8>,
    pub video_ids: Vec<String>,
    /// 1-based.
    pub frame_idx: Vec<usize>,
}

impl LabeledScores {
    pub fn push_video(&mut self, series: &ScoreSeries, labels: &[u8]) -> Result<()> {
        if series.len() != labels.len() {
            return Err(Error::LabelLengthMismatch {
                video_id: series.video_id.clone(),
                labels: labels.len(),
                frames: series.len(),
            });
        }
        self.scores.extend_from_slice(&series.anomaly);
        self.labels.extend_from_slice(labels);
        self.video_ids
            .extend(std::iter::repeat_n(series.video_id.clone(), labels.len()));
        self.frame_idx.extend(1..=labels.len());
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }
}

/// ROC curve and trapezoidal AUC by sweeping every distinct score from high
/// to low.
pub fn roc_auc(scores: &[f64], labels: &[u8]) -> Result<EvalReport> {
    if scores.len() != labels.len() {
        return Err(Error::ShapeMismatch {
            expected: vec![scores.len()],
            actual: vec![labels.len()],
        });
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::OutOfRange("NaN anomaly score".into()));
    }
    let positives = labels.iter().filter(|l| **l != 0).count();
    let negatives = labels.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::SingleClass);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let (p, n) = (positives as f64, negatives as f64);
    let mut roc = vec![RocPoint {
        fpr: 0.0,
        tpr: 0.0,
        threshold: f64::INFINITY,
    }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut auc = 0.0;
    let mut i = 0;
    while i < order.len() {
        let threshold = scores[order[i]];
        while i < order.len() && scores[order[i]] == threshold {
            if labels[order[i]] != 0 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let prev = *roc.last().expect("non-empty");
        let point = RocPoint {
            fpr: fp as f64 / n,
            tpr: tp as f64 / p,
            threshold,
        };
        auc += (point.fpr - prev.fpr) * (point.tpr + prev.tpr) / 2.0;
        roc.push(point);
    }
    Ok(EvalReport {
        auc,
        roc,
        per_video: Vec::new(),
    })
}

/// Trapezoidal area under a list of ROC points.
pub fn trapezoid_area(roc: &[RocPoint]) -> f64 {
    roc.windows(2)
        .map(|w| (w[1].fpr - w[0].fpr) * (w[1].tpr + w[0].tpr) / 2.0)
        .sum()
}

/// Scores and labels of a whole test split.
pub struct Evaluation {
    pub report: EvalReport,
    pub series: Vec<ScoreSeries>,
    pub labeled: LabeledScores,
}

/// Scores every video of `index` (videos in parallel) and evaluates the
/// concatenation.
pub fn evaluate_index(
    model: &Autoencoder<f32>,
    index: &DatasetIndex,
    source: &dyn FrameSource,
    cfg: &PsnrConfig,
    batch: usize,
) -> Result<Evaluation> {
    if index.labels.len() != index.videos.len() {
        return Err(Error::Config("test split has no labels".into()));
    }
    let series = index
        .videos
        .par_iter()
        .map(|v| score_video(model, source, v, cfg, batch))
        .collect::<Result<Vec<_>>>()?;
    let mut labeled = LabeledScores::default();
    let mut per_video = Vec::with_capacity(series.len());
    for (s, track) in series.iter().zip(&index.labels) {
        labeled.push_video(s, &track.labels)?;
        per_video.push(VideoAuc {
            video_id: s.video_id.clone(),
            auc: roc_auc(&s.anomaly, &track.labels).ok().map(|r| r.auc),
        });
    }
    let mut report = roc_auc(&labeled.scores, &labeled.labels)?;
    report.per_video = per_video;
    Ok(Evaluation {
        report,
        series,
        labeled,
    })
}

/// Loads the test split under `root` and evaluates `model` on it.
pub fn evaluate(model: &Autoencoder<f32>, root: &Path, cfg: &PsnrConfig, batch: usize) -> Result<Evaluation> {
    let index = load_dataset(root, Split::Test)?;
    let [_, _, h, w] = model.arch.input;
    evaluate_index(model, &index, &DiskFrames::new(h, w), cfg, batch)
}

impl EvalReport {
    pub fn write_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn write_roc_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["fpr", "tpr", "threshold"])?;
        for p in &self.roc {
            w.write_record([p.fpr.to_string(), p.tpr.to_string(), p.threshold.to_string()])?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Side-by-side AUCs of two models on one test set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub label_a: String,
    pub label_b: String,
    pub auc_a: f64,
    pub auc_b: f64,
    pub per_video: Vec<(String, Option<f64>, Option<f64>)>,
}

impl Comparison {
    /// `auc_b - auc_a`.
    pub fn delta(&self) -> f64 {
        self.auc_b - self.auc_a
    }

    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let width = self.label_a.len().max(self.label_b.len()).max(8);
        let _ = writeln!(out, "{:<width$}  {:>8}", "model", "AUC");
        let _ = writeln!(out, "{:<width$}  {:>7.2}%", self.label_a, self.auc_a * 100.0);
        let _ = writeln!(out, "{:<width$}  {:>7.2}%", self.label_b, self.auc_b * 100.0);
        let _ = writeln!(out, "{:<width$}  {:>+7.2}%", "delta", self.delta() * 100.0);
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["scope", &self.label_a, &self.label_b, "delta"])?;
        w.write_record([
            "all".to_string(),
            self.auc_a.to_string(),
            self.auc_b.to_string(),
            self.delta().to_string(),
        ])?;
        let fmt = |v: &Option<f64>| v.map_or(String::new(), |x| x.to_string());
        for (id, a, b) in &self.per_video {
            let d = match (a, b) {
                (Some(a), Some(b)) => (b - a).to_string(),
                _ => String::new(),
            };
            w.write_record([id.clone(), fmt(a), fmt(b), d])?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Evaluates two models on the same test split.
pub fn compare(
    (label_a, model_a): (&str, &Autoencoder<f32>),
    (label_b, model_b): (&str, &Autoencoder<f32>),
    root: &Path,
    cfg: &PsnrConfig,
    batch: usize,
) -> Result<Comparison> {
    let a = evaluate(model_a, root, cfg, batch)?;
    let b = evaluate(model_b, root, cfg, batch)?;
    let per_video = a
        .report
        .per_video
        .iter()
        .zip(&b.report.per_video)
        .map(|(x, y)| (x.video_id.clone(), x.auc, y.auc))
        .collect();
    Ok(Comparison {
        label_a: label_a.to_string(),
        label_b: label_b.to_string(),
        auc_a: a.report.auc,
        auc_b: b.report.auc,
        per_video,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_inverted_and_tied() {
        let s = [0.9, 0.8, 0.2, 0.1];
        assert_eq!(roc_auc(&s, &[1, 1, 0, 0]).unwrap().auc, 1.0);
        assert_eq!(roc_auc(&s, &[0, 0, 1, 1]).unwrap().auc, 0.0);
        assert_eq!(roc_auc(&[0.5; 4], &[1, 0, 1, 0]).unwrap().auc, 0.5);
    }

    #[test]
    fn single_class_is_an_error() {
        assert!(matches!(roc_auc(&[0.1, 0.2], &[1, 1]), Err(Error::SingleClass)));
        assert!(matches!(roc_auc(&[0.1, 0.2], &[0, 0]), Err(Error::SingleClass)));
    }

    #[test]
    fn roc_is_a_staircase_from_origin_to_one() {
        let s = [0.3, 0.3, 0.9, 0.1, 0.5, 0.5, 0.7];
        let l = [1, 0, 1, 0, 0, 1, 0];
        let r = roc_auc(&s, &l).unwrap();
        let first = r.roc.first().unwrap();
        let last = r.roc.last().unwrap();
        assert_eq!((first.fpr, first.tpr), (0.0, 0.0));
        assert_eq!((last.fpr, last.tpr), (1.0, 1.0));
        for w in r.roc.windows(2) {
            assert!(w[1].fpr >= w[0].fpr && w[1].tpr >= w[0].tpr);
        }
        assert!((trapezoid_area(&r.roc) - r.auc).abs() < 1e-15);
    }

    #[test]
    fn comparison_of_identical_models_has_zero_delta() {
        let c = Comparison {
            label_a: "a".into(),
            label_b: "a".into(),
            auc_a: 0.8,
            auc_b: 0.8,
            per_video: vec![],
        };
        assert_eq!(c.delta(), 0.0);
        assert!(c.to_table().contains("+0.00%"));
    }
}
