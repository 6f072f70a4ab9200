use std::path::PathBuf;

use thiserror::Error;

/// Every failure surfaced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("mask has no visible keypoints")]
    EmptyMask,

    #[error("keypoint set is invalid: {0}")]
    InvalidKeypoints(String),

    #[error("cannot normalize driving mask: {0}")]
    Normalization(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("similarity row {row} has no valid entries")]
    EmptySimilarityRow { row: usize },

    #[error(
        "non-finite {component} loss at step {step} (last good checkpoint: {last_checkpoint:?})"
    )]
    NonFiniteLoss {
        step: u64,
        component: String,
        last_checkpoint: Option<PathBuf>,
    },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("epoch {epoch} out of range for a {epochs}-epoch schedule")]
    EpochOutOfRange { epoch: f64, epochs: u32 },

    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Tensor(#[from] candle_core::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) trait IoContext<T> {
    fn at(self, path: impl Into<PathBuf>) -> Result<T>;
}

impl<T> IoContext<T> for std::io::Result<T> {
    fn at(self, path: impl Into<PathBuf>) -> Result<T> {
        self.map_err(|source| Error::Io {
            path: path.into(),
            source,
        })
    }
}
