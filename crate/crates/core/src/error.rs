use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Failures while decoding one of the binary containers.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum CodecError {
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: &'static str, found: Vec<u8> },
    #[error("truncated payload: needed {needed} bytes at offset {offset}, {available} available")]
    Truncated { offset: usize, needed: usize, available: usize },
    #[error("dimension overflow: {0}")]
    DimensionOverflow(String),
    #[error("{extra} trailing bytes after payload")]
    TrailingBytes { extra: usize },
    #[error("unsupported format version {0}")]
    UnsupportedVersion(u32),
    #[error("malformed container: {0}")]
    Malformed(String),
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: expected {expected:?}, found {found:?}")]
    ShapeMismatch { expected: Vec<usize>, found: Vec<usize> },
    #[error("step index {n} out of range {lo}..={hi}")]
    StepOutOfRange { n: usize, lo: usize, hi: usize },
    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("backward called before any forward pass was recorded")]
    BackwardBeforeForward,
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("dataset contains a single class; both healthy and diseased samples are required")]
    SingleClassDataset,
    #[error("invalid class tag {0:?}")]
    InvalidClass(String),
    #[error("lesion radius {radius} does not fit inside the organ")]
    LesionTooLarge { radius: f64 },
    #[error("mask is empty")]
    EmptyMask,
    #[error("invariant violated: {0}")]
    Invariant(String),
    #[error("{path}: {source}")]
    Codec { path: PathBuf, source: CodecError },
    #[error(transparent)]
    Decode(#[from] CodecError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("config: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn shape(expected: &[usize], found: &[usize]) -> Self {
        Error::ShapeMismatch { expected: expected.to_vec(), found: found.to_vec() }
    }
}
