use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("bad magic: expected {expected:?}")]
    BadMagic { expected: &'static str },
    #[error("truncated payload: header declares {expected} bytes of data, found {found}")]
    TruncatedPayload { expected: usize, found: usize },
    #[error("non-finite feature")]
    NonFinite,
    #[error("zero-norm feature")]
    ZeroNorm,
    #[error("index out of range: {index} >= {len}")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("insufficient classes: need {need}, split has {have}")]
    InsufficientClasses { need: usize, have: usize },
    #[error("insufficient videos in class {class}: need {need}, have {have}")]
    InsufficientVideos {
        class: String,
        need: usize,
        have: usize,
    },
    #[error("manifest error: {0}")]
    Manifest(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("non-differentiable configuration: {0}")]
    NonDifferentiable(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
