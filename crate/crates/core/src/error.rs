use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {what} (expected {expected}, got {got})")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("state is not binary: entry {index} = {value}")]
    NotBinary { index: usize, value: f64 },

    #[error("model has {units} units; exact enumeration supports at most {max}")]
    TooManyUnits { units: usize, max: usize },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("index {index} out of range for {len} units")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("direction matrix is not symmetric with zero diagonal")]
    AsymmetricDirection,

    #[error("direction basis is rank deficient (smallest singular value {0:e})")]
    DependentDirections(f64),

    #[error("training diverged at update {update}: {detail}")]
    Diverged { update: u64, detail: String },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("idx: {0}")]
    Idx(#[from] crate::data::IdxError),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
