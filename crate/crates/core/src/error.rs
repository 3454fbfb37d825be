use std::path::{Path, PathBuf};

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("rejected input: {0}")]
    InvalidInput(String),

    #[error("shape mismatch: expected {expected:?}, got {got:?}")]
    ShapeMismatch { expected: Vec<usize>, got: Vec<usize> },

    #[error("cannot canonize layer {index}: {reason}")]
    Canonization { index: usize, reason: String },

    #[error("training aborted at epoch {epoch}, step {step}: loss is {loss}")]
    NonFiniteLoss { epoch: usize, step: usize, loss: f64 },

    /// A metric has no defined value for this input; callers skip the item
    /// and record the reason.
    #[error("undefined: {0}")]
    Undefined(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}: corrupt file: {reason}", path.display())]
    Corrupt { path: PathBuf, reason: String },

    #[error("missing {}: {hint}", path.display())]
    Missing { path: PathBuf, hint: String },

    #[error("{}: {reason}", path.display())]
    Stale { path: PathBuf, reason: String },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn undefined(msg: impl Into<String>) -> Self {
        Error::Undefined(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn corrupt(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Corrupt {
            path: path.into(),
            reason: reason.into(),
        }
    }

    /// The file an error is about, if any.
    pub fn path(&self) -> Option<&Path> {
        match self {
            Error::Io { path, .. } | Error::Corrupt { path, .. } | Error::Missing { path, .. } | Error::Stale { path, .. } => {
                Some(path)
            }
            _ => None,
        }
    }

    /// Short machine-readable tag, used in the CLI's error JSON.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidInput(_) => "invalid_input",
            Error::ShapeMismatch { .. } => "shape_mismatch",
            Error::Canonization { .. } => "canonization",
            Error::NonFiniteLoss { .. } => "non_finite_loss",
            Error::Undefined(_) => "undefined",
            Error::Io { .. } => "io",
            Error::Corrupt { .. } => "corrupt",
            Error::Missing { .. } => "missing",
            Error::Stale { .. } => "stale",
            Error::Json(_) => "json",
            Error::Csv(_) => "csv",
        }
    }
}
