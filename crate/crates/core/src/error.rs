//! Error type shared by every module in this crate.

use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// A file does not conform to its on-disk layout (bad magic, truncated
    /// payload, nonzero reserved bytes, malformed JSON).
    #[error("format error: {0}")]
    Format(String),

    /// Well-formed container holding invalid values (NaN/Inf payload, scores
    /// out of range, a normalized flag on rows that are not unit norm).
    #[error("data error: {0}")]
    Data(String),

    /// Dimensions of two inputs do not line up.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// A parameter is outside its valid range.
    #[error("domain error: {0}")]
    Domain(String),

    /// Too few frames for the requested operation.
    #[error("too short: {0}")]
    TooShort(String),

    /// A vector that must be normalized has (near-)zero norm.
    #[error("degenerate feature: {0}")]
    DegenerateFeature(String),

    /// A training batch or pool that must be non-empty is empty.
    #[error("empty batch: {0}")]
    EmptyBatch(String),

    /// Loss or parameters stopped being finite during optimization.
    #[error("training diverged: {0}")]
    TrainingDiverged(String),

    /// Manifest is inconsistent (duplicate ids, overlapping folds, shot
    /// intervals that do not cover the video).
    #[error("manifest error: {0}")]
    Manifest(String),

    /// Evaluation was requested for a video without reference annotations.
    #[error("missing reference: {0}")]
    MissingReference(String),

    /// Synthetic dataset spec is unsatisfiable.
    #[error("spec error: {0}")]
    Spec(String),

    /// A labelling has only one class where two are required.
    #[error("degenerate labels: {0}")]
    DegenerateLabels(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
