//! Crate-wide error type.

use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A kernel or graph operation was handed tensors whose shapes do not fit.
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },

    /// Bad hyperparameter, malformed strategy, or any other caller mistake
    /// that is not tied to an external file.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// The network topology is one the pruner or graph walker cannot handle.
    #[error("unsupported topology: {0}")]
    Unsupported(String),

    /// A dataset file failed a format check.
    #[error("data format error in {path}: {detail}")]
    DataFormat { path: PathBuf, detail: String },

    /// Split construction failed (fractions too large, empty split, ...).
    #[error("split error: {0}")]
    Split(String),

    /// Degenerate input to a statistics routine (constant vector, too few points).
    #[error("statistics error: {0}")]
    Stat(String),

    /// Rejection sampling could not hit the FLOPs constraint.
    #[error(
        "no strategy satisfied FLOPs target {target} (tolerance {tolerance}) \
         within {attempts} attempts"
    )]
    SearchInfeasible {
        target: f64,
        tolerance: f64,
        attempts: usize,
    },

    /// NaN or Inf showed up where it must not.
    #[error("numeric failure: {0}")]
    Numeric(String),

    /// Checkpoint file is structurally broken (bad magic, checksum, shapes).
    #[error("checkpoint error in {path}: {detail}")]
    Checkpoint { path: PathBuf, detail: String },

    /// Checkpoint was written by an incompatible format version.
    #[error("checkpoint {path}: format version {found} (this build reads version {supported})")]
    CheckpointVersion {
        path: PathBuf,
        found: u32,
        supported: u32,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::ShapeMismatch {
            op,
            detail: detail.into(),
        }
    }
}
