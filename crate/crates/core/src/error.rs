use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Errors surfaced by the library.
///
/// Variants fall into three families that map onto process exit codes:
/// usage/config problems, data problems and numeric failures.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("no videos found under {0}")]
    NoVideos(PathBuf),

    #[error("missing directory {0}")]
    MissingDirectory(PathBuf),

    #[error("video {video_id}: empty video (no frames)")]
    EmptyVideo { video_id: String },

    #[error("video {video_id}: frame files are not contiguous from 1 (expected {expected}, found {found})")]
    NonContiguousFrames {
        video_id: String,
        expected: usize,
        found: usize,
    },

    #[error("video {video_id}: missing labels file {path}")]
    MissingLabels { video_id: String, path: PathBuf },

    #[error("video {video_id}: label length mismatch ({labels} labels for {frames} frames)")]
    LabelLengthMismatch {
        video_id: String,
        labels: usize,
        frames: usize,
    },

    #[error("video {video_id}: bad label on line {line}: {text:?}")]
    BadLabel {
        video_id: String,
        line: usize,
        text: String,
    },

    #[error("video {video_id}: frame index {index} out of range 1..={frame_count}")]
    FrameOutOfRange {
        video_id: String,
        index: usize,
        frame_count: usize,
    },

    #[error("video {video_id}: clip n={start} T={length} s={stride} exceeds {frame_count} frames")]
    ClipOutOfBounds {
        video_id: String,
        start: usize,
        length: usize,
        stride: usize,
        frame_count: usize,
    },

    #[error("video {video_id}: video too short ({frame_count} frames, need at least {required})")]
    VideoTooShort {
        video_id: String,
        frame_count: usize,
        required: usize,
    },

    #[error("pseudo clip requires s>1 (got s={0})")]
    InvalidSkip(usize),

    #[error("skip set is empty")]
    EmptySkipSet,

    #[error("shape mismatch: expected {expected:?}, got {actual:?}")]
    ShapeMismatch { expected: Vec<usize>, actual: Vec<usize> },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("value out of range: {0}")]
    OutOfRange(String),

    #[error("AUC undefined: labels contain a single class")]
    SingleClass,

    #[error("non-finite loss at step {step}: {detail}")]
    NonFiniteLoss { step: u64, detail: String },

    #[error("checkpoint {path}: {reason}")]
    Checkpoint { path: PathBuf, reason: String },

    #[error("image {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code: 1 usage/config, 2 data, 3 numeric.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 1,
            Error::NonFiniteLoss { .. } => 3,
            _ => 2,
        }
    }
}
