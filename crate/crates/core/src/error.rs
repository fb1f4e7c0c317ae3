use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("schema error: {0}")]
    Schema(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("tracklet {id}: {msg}")]
    Tracklet { id: String, msg: String },

    #[error("manifest line {line}: {msg}")]
    Manifest { line: usize, msg: String },

    #[error("cannot read frame {path}: {msg}")]
    Frame { path: PathBuf, msg: String },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid label: {0}")]
    Label(String),

    #[error("batch-norm has no running statistics; run at least one training step (calibration) before eval mode")]
    Uncalibrated,

    #[error("index {index} out of range for {len} attributes")]
    AttributeIndex { index: usize, len: usize },

    #[error("non-finite loss at step {step}: {diagnostic}")]
    NonFinite { step: usize, diagnostic: String },

    #[error("freeze contract violated: {0}")]
    Frozen(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Tensor(#[from] candle_core::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short stable name of the variant, for machine-readable reports.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Schema(_) => "schema",
            Error::Config(_) => "config",
            Error::Tracklet { .. } => "tracklet",
            Error::Manifest { .. } => "manifest",
            Error::Frame { .. } => "frame",
            Error::Shape(_) => "shape",
            Error::Label(_) => "label",
            Error::Uncalibrated => "uncalibrated",
            Error::AttributeIndex { .. } => "attribute_index",
            Error::NonFinite { .. } => "non_finite",
            Error::Frozen(_) => "frozen",
            Error::Checkpoint(_) => "checkpoint",
            Error::Io { .. } => "io",
            Error::Json(_) => "json",
            Error::Tensor(_) => "tensor",
        }
    }

    /// True for errors caused by bad user input (configs, schemas, manifests),
    /// as opposed to failures while running.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Schema(_)
                | Error::Config(_)
                | Error::Tracklet { .. }
                | Error::Manifest { .. }
                | Error::Label(_)
                | Error::AttributeIndex { .. }
                | Error::Json(_)
        )
    }
}
