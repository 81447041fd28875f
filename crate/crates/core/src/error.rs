use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {what}: expected {expected}, got {actual}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("index {index} out of range for {what} (len {len})")]
    OutOfRange {
        what: &'static str,
        index: usize,
        len: usize,
    },

    #[error("non-finite value in {what} at offset {offset}")]
    NonFinite { what: String, offset: usize },

    #[error("weight {index} = {value} lies outside [0, 1]")]
    InfeasibleWeight { index: usize, value: f64 },

    #[error("invalid corrective pair ({j}, {k}): {reason}")]
    InvalidPair { j: usize, k: usize, reason: &'static str },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("singular system: {0}")]
    Singular(String),

    #[error("eigensolver failed at coordinate {coordinate}: {reason}")]
    Eigen { coordinate: usize, reason: String },

    #[error("cache fingerprint {cache:#018x} does not match model fingerprint {model:#018x}")]
    FingerprintMismatch { cache: u64, model: u64 },

    #[error("degenerate comparison graph: {0}")]
    DegenerateComparisons(String),

    #[error("inconsistent frame sets: {0}")]
    InconsistentFrames(String),

    #[error("{path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }
}

pub(crate) fn check_len(what: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            what,
            expected,
            actual,
        })
    }
}
