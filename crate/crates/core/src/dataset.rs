//! Frame-folder video datasets.
//!
//! Layout on disk:
//!
//! ```text
//! <root>/<split>/<video_id>/000001.png ...
//! <root>/test_labels/<video_id>.txt      one 0/1 per line, test split only
//! ```
//!
//! Frame indices are 1-based everywhere in the public API, so `I_1` is the
//! first frame of a video and a clip starting at `n` with stride `s` covers
//! `I_n, I_{n+s}, ..., I_{n+(T-1)s}`.

use std::borrow::Cow;
use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use image::imageops::FilterType;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const FRAME_EXTENSIONS: [&str; 3] = ["png", "jpg", "jpeg"];
pub const LABELS_DIR: &str = "test_labels";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn dir_name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.dir_name())
    }
}

/// Resize filter applied when frames are not already `H×W`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Interpolation {
    #[default]
    Bilinear,
    Nearest,
}

impl Interpolation {
    fn filter(self) -> FilterType {
        match self {
            Interpolation::Bilinear => FilterType::Triangle,
            Interpolation::Nearest => FilterType::Nearest,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VideoMeta {
    pub video_id: String,
    pub frame_dir: PathBuf,
    /// Frame files ordered by frame index; entry `k - 1` holds `I_k`.
    pub frames: Vec<PathBuf>,
}

impl VideoMeta {
    pub fn frame_count(&self) -> usize {
        self.frames.len()
    }

    /// Scans `dir` for numbered frame files and checks they run 1..=K.
    pub fn scan(video_id: &str, dir: &Path) -> Result<Self> {
        let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
        let mut numbered = Vec::new();
        for entry in entries {
            let path = entry.map_err(|e| Error::io(dir, e))?.path();
            let ext_ok = path
                .extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| FRAME_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()));
            let index = path
                .file_stem()
                .and_then(|s| s.to_str())
                .and_then(|s| s.parse::<usize>().ok());
            if let (true, Some(index)) = (ext_ok, index) {
                numbered.push((index, path));
            }
        }
        if numbered.is_empty() {
            return Err(Error::EmptyVideo {
                video_id: video_id.to_string(),
            });
        }
        numbered.sort();
        for (expected, (found, _)) in (1..).zip(&numbered) {
            if *found != expected {
                return Err(Error::NonContiguousFrames {
                    video_id: video_id.to_string(),
                    expected,
                    found: *found,
                });
            }
        }
        Ok(Self {
            video_id: video_id.to_string(),
            frame_dir: dir.to_path_buf(),
            frames: numbered.into_iter().map(|(_, p)| p).collect(),
        })
    }
}

/// Ground truth for one test video: `labels[k - 1]` is 1 when `I_k` is
/// anomalous.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelTrack {
    pub video_id: String,
    pub labels: Vec<u8>,
}

impl LabelTrack {
    pub fn read(video_id: &str, path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|_| Error::MissingLabels {
            video_id: video_id.to_string(),
            path: path.to_path_buf(),
        })?;
        let mut labels = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            labels.push(match line {
                "0" => 0,
                "1" => 1,
                _ => {
                    return Err(Error::BadLabel {
                        video_id: video_id.to_string(),
                        line: i + 1,
                        text: line.to_string(),
                    })
                }
            });
        }
        Ok(Self {
            video_id: video_id.to_string(),
            labels,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut text = String::with_capacity(self.labels.len() * 2);
        for l in &self.labels {
            text.push(if *l == 0 { '0' } else { '1' });
            text.push('\n');
        }
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

/// All videos of one split, sorted by id.
#[derive(Debug, Clone)]
pub struct DatasetIndex {
    pub root: PathBuf,
    pub split: Split,
    pub videos: Vec<VideoMeta>,
    /// Parallel to `videos`; empty for the train split.
    pub labels: Vec<LabelTrack>,
}

impl DatasetIndex {
    pub fn total_frames(&self) -> usize {
        self.videos.iter().map(VideoMeta::frame_count).sum()
    }

    pub fn video(&self, id: &str) -> Option<&VideoMeta> {
        self.videos.iter().find(|v| v.video_id == id)
    }
}

/// Indexes `<root>/<split>/*`, verifying frame numbering and, for the test
/// split, label lengths.
pub fn load_dataset(root: &Path, split: Split) -> Result<DatasetIndex> {
    let split_dir = root.join(split.dir_name());
    if !split_dir.is_dir() {
        return Err(Error::MissingDirectory(split_dir));
    }
    let mut dirs = Vec::new();
    for entry in fs::read_dir(&split_dir).map_err(|e| Error::io(&split_dir, e))? {
        let path = entry.map_err(|e| Error::io(&split_dir, e))?.path();
        if path.is_dir() {
            if let Some(id) = path.file_name().and_then(|n| n.to_str()) {
                dirs.push((id.to_string(), path));
            }
        }
    }
    if dirs.is_empty() {
        return Err(Error::NoVideos(split_dir));
    }
    dirs.sort();
    let videos = dirs
        .iter()
        .map(|(id, path)| VideoMeta::scan(id, path))
        .collect::<Result<Vec<_>>>()?;
    let mut labels = Vec::new();
    if split == Split::Test {
        let label_dir = root.join(LABELS_DIR);
        for v in &videos {
            let track = LabelTrack::read(&v.video_id, &label_dir.join(format!("{}.txt", v.video_id)))?;
            if track.labels.len() != v.frame_count() {
                return Err(Error::LabelLengthMismatch {
                    video_id: v.video_id.clone(),
                    labels: track.labels.len(),
                    frames: v.frame_count(),
                });
            }
            labels.push(track);
        }
    }
    Ok(DatasetIndex {
        root: root.to_path_buf(),
        split,
        videos,
        labels,
    })
}

/// A single-channel frame with values in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub height: usize,
    pub width: usize,
    /// Row-major `H×W`.
    pub pixels: Vec<f32>,
    /// 1-based source index within its video.
    pub index: usize,
}

impl Frame {
    pub fn new(height: usize, width: usize, pixels: Vec<f32>, index: usize) -> Self {
        assert_eq!(pixels.len(), height * width, "frame size");
        Self {
            height,
            width,
            pixels,
            index,
        }
    }
}

/// `[0, 255] → [-1, 1]` via `x / 127.5 - 1`.
#[inline]
pub fn normalize_pixel(v: u8) -> f32 {
    (v as f64 / 127.5 - 1.0) as f32
}

/// Decodes frame `idx` (1-based) as luminance, resized to `height×width`.
pub fn decode_frame(meta: &VideoMeta, idx: usize, height: usize, width: usize) -> Result<Frame> {
    decode_frame_with(meta, idx, height, width, Interpolation::Bilinear)
}

pub fn decode_frame_with(
    meta: &VideoMeta,
    idx: usize,
    height: usize,
    width: usize,
    interpolation: Interpolation,
) -> Result<Frame> {
    if idx == 0 || idx > meta.frame_count() {
        return Err(Error::FrameOutOfRange {
            video_id: meta.video_id.clone(),
            index: idx,
            frame_count: meta.frame_count(),
        });
    }
    let path = &meta.frames[idx - 1];
    let img = image::open(path).map_err(|source| Error::Image {
        path: path.clone(),
        source,
    })?;
    let mut luma = img.to_luma8();
    if luma.width() as usize != width || luma.height() as usize != height {
        luma = image::imageops::resize(&luma, width as u32, height as u32, interpolation.filter());
    }
    let pixels = luma.as_raw().iter().map(|v| normalize_pixel(*v)).collect();
    Ok(Frame::new(height, width, pixels, idx))
}

/// Where clip frames come from.
pub trait FrameSource: Sync {
    /// `(H, W)` of every frame produced.
    fn frame_shape(&self) -> (usize, usize);

    fn frame(&self, meta: &VideoMeta, idx: usize) -> Result<Cow<'_, Frame>>;
}

/// Decodes from disk on every request.
#[derive(Debug, Clone, Copy)]
pub struct DiskFrames {
    pub height: usize,
    pub width: usize,
    pub interpolation: Interpolation,
}

impl DiskFrames {
    pub fn new(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            interpolation: Interpolation::Bilinear,
        }
    }
}

impl FrameSource for DiskFrames {
    fn frame_shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    fn frame(&self, meta: &VideoMeta, idx: usize) -> Result<Cow<'_, Frame>> {
        decode_frame_with(meta, idx, self.height, self.width, self.interpolation).map(Cow::Owned)
    }
}

/// Every frame of a dataset decoded once up front.
#[derive(Debug, Clone)]
pub struct FrameCache {
    height: usize,
    width: usize,
    videos: HashMap<String, Vec<Frame>>,
}

impl FrameCache {
    pub fn load(index: &DatasetIndex, disk: DiskFrames) -> Result<Self> {
        let decoded = index
            .videos
            .par_iter()
            .map(|v| {
                let frames = (1..=v.frame_count())
                    .map(|k| disk.frame(v, k).map(Cow::into_owned))
                    .collect::<Result<Vec<_>>>()?;
                Ok((v.video_id.clone(), frames))
            })
            .collect::<Result<HashMap<_, _>>>()?;
        Ok(Self {
            height: disk.height,
            width: disk.width,
            videos: decoded,
        })
    }
}

impl FrameSource for FrameCache {
    fn frame_shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    fn frame(&self, meta: &VideoMeta, idx: usize) -> Result<Cow<'_, Frame>> {
        let out_of_range = || Error::FrameOutOfRange {
            video_id: meta.video_id.clone(),
            index: idx,
            frame_count: meta.frame_count(),
        };
        let frames = self.videos.get(&meta.video_id).ok_or_else(out_of_range)?;
        if idx == 0 {
            return Err(out_of_range());
        }
        frames.get(idx - 1).map(Cow::Borrowed).ok_or_else(out_of_range)
    }
}

/// Which frames of which video a clip holds: `I_{n + t·s}` for `0 ≤ t < T`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ClipSpec {
    pub video_id: String,
    pub start: usize,
    pub stride: usize,
    pub length: usize,
}

impl ClipSpec {
    /// 1-based frame indices covered by the clip.
    pub fn indices(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.length).map(move |t| self.start + t * self.stride)
    }

    pub fn last_index(&self) -> usize {
        self.start + (self.length - 1) * self.stride
    }

    pub fn is_pseudo(&self) -> bool {
        self.stride > 1
    }

    pub fn check(&self, frame_count: usize) -> Result<()> {
        if self.start == 0 || self.stride == 0 || self.length == 0 || self.last_index() > frame_count {
            return Err(Error::ClipOutOfBounds {
                video_id: self.video_id.clone(),
                start: self.start,
                length: self.length,
                stride: self.stride,
                frame_count,
            });
        }
        Ok(())
    }
}

/// `T×C×H×W` frames in `[-1, 1]` plus the spec that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct Clip {
    data: Vec<f32>,
    shape: [usize; 4],
    spec: ClipSpec,
}

impl Clip {
    /// Reads the frames named by `spec` from `source`.
    pub fn assemble(source: &dyn FrameSource, meta: &VideoMeta, spec: ClipSpec) -> Result<Self> {
        spec.check(meta.frame_count())?;
        let (h, w) = source.frame_shape();
        let mut data = Vec::with_capacity(spec.length * h * w);
        for idx in spec.indices() {
            data.extend_from_slice(&source.frame(meta, idx)?.pixels);
        }
        Ok(Self {
            data,
            shape: [spec.length, 1, h, w],
            spec,
        })
    }

    /// Builds a clip from raw `T×C×H×W` data.
    pub fn from_parts(data: Vec<f32>, shape: [usize; 4], spec: ClipSpec) -> Result<Self> {
        if data.len() != shape.iter().product::<usize>() || shape[0] != spec.length {
            return Err(Error::ShapeMismatch {
                expected: shape.to_vec(),
                actual: vec![data.len()],
            });
        }
        Ok(Self { data, shape, spec })
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn shape(&self) -> [usize; 4] {
        self.shape
    }

    pub fn spec(&self) -> &ClipSpec {
        &self.spec
    }

    pub fn is_pseudo(&self) -> bool {
        self.spec.is_pseudo()
    }

    /// Frame `t` (0-based within the clip), all channels.
    pub fn frame(&self, t: usize) -> &[f32] {
        let len = self.shape[1] * self.shape[2] * self.shape[3];
        &self.data[t * len..(t + 1) * len]
    }
}

/// Normal clip `(I_n, ..., I_{n+T-1})`.
pub fn sample_normal_clip(source: &dyn FrameSource, meta: &VideoMeta, n: usize, length: usize) -> Result<Clip> {
    Clip::assemble(
        source,
        meta,
        ClipSpec {
            video_id: meta.video_id.clone(),
            start: n,
            stride: 1,
            length,
        },
    )
}

/// Minimum frames a video needs for a `(T, s)` clip.
pub fn required_frames(length: usize, stride: usize) -> usize {
    (length - 1) * stride + 1
}

/// Start index uniform on `[1, K - (T-1)·s]`.
pub fn sample_start_index(meta: &VideoMeta, length: usize, stride: usize, rng: &mut impl Rng) -> Result<usize> {
    let required = required_frames(length, stride);
    if meta.frame_count() < required {
        return Err(Error::VideoTooShort {
            video_id: meta.video_id.clone(),
            frame_count: meta.frame_count(),
            required,
        });
    }
    Ok(rng.gen_range(1..=meta.frame_count() + 1 - required))
}
