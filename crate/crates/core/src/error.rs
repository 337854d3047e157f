use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = MsnetError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum MsnetError {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid sprite spec: {0}")]
    InvalidSpriteSpec(String),

    #[error("missing manifest: {}", .0.display())]
    MissingManifest(PathBuf),

    #[error("corrupt manifest {}: {reason}", .path.display())]
    CorruptManifest { path: PathBuf, reason: String },

    #[error("missing frame file: {}", .0.display())]
    MissingFrameFile(PathBuf),

    #[error("corrupt frame file {}: {reason}", .path.display())]
    CorruptFrame { path: PathBuf, reason: String },

    #[error("clip {clip_id}: manifest declares {expected} frames, found {found}")]
    FrameCountMismatch {
        clip_id: String,
        expected: usize,
        found: usize,
    },

    #[error("heterogeneous frame shapes in clip {clip_id}: expected {expected:?}, got {got:?}")]
    HeterogeneousShapes {
        clip_id: String,
        expected: [usize; 3],
        got: [usize; 3],
    },

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("clip {clip_id} too short: {len} frames, need {needed}")]
    ClipTooShort {
        clip_id: String,
        len: usize,
        needed: usize,
    },

    #[error("cross-video pairs need at least 2 clips, dataset has {0}")]
    NotEnoughClips(usize),

    #[error("feature kind mismatch: expected {expected}, got {got}")]
    KindMismatch { expected: String, got: String },

    #[error("missing loss component {0}")]
    MissingComponent(&'static str),

    #[error("non-finite loss at step {step}: {report}")]
    NonFiniteLoss { step: u64, report: String },

    #[error("missing parameter {0}")]
    MissingParam(String),

    #[error("checkpoint version mismatch: file has {found}, expected {expected}")]
    CheckpointVersion { found: u32, expected: u32 },

    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("i/o error on {}: {source}", .path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("image error: {0}")]
    Image(#[from] image::ImageError),
}

impl MsnetError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        MsnetError::Io {
            path: path.into(),
            source,
        }
    }
}
