use std::path::PathBuf;

use thiserror::Error;

/// Errors raised across the compression pipeline.
#[derive(Debug, Error)]
pub enum MessiError {
    /// A size, rank, index or option is outside its valid range.
    #[error("parameter error: {0}")]
    Parameter(String),
    /// Input data violates a content requirement (e.g. non-finite entries).
    #[error("input error: {0}")]
    Input(String),
    /// An on-disk artifact is malformed or inconsistent.
    #[error("format error: {0}")]
    Format(String),
    /// An exhaustive search would be too large to run.
    #[error("size error: {0}")]
    Size(String),
    #[error("i/o error at {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl MessiError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        MessiError::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, MessiError>;
