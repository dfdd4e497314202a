use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("counts sum to zero; no ratio can be formed")]
    ZeroTotal,

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("row {row} has zero L2 norm")]
    ZeroNorm { row: usize },

    #[error("row {row} is not unit-norm (norm = {norm})")]
    Normalization { row: usize, norm: f64 },

    #[error("dataset is empty: {0}")]
    EmptyDataset(String),

    #[error("underdetermined fit: {available} usable examples, need at least {required}")]
    Underdetermined { available: usize, required: usize },

    #[error("invalid value: {0}")]
    InvalidValue(String),

    #[error("{}:{line}: {msg}", path.display())]
    Parse { path: PathBuf, line: usize, msg: String },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("cannot write {}: {source}", path.display())]
    Write {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidValue(msg.into())
    }

    /// Process exit code: 2 for bad input, 3 for too little data, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            e if e.is_data_insufficiency() => 3,
            Error::Write { .. } => 1,
            _ => 2,
        }
    }

    /// Whether the error reflects too little data rather than malformed input.
    pub fn is_data_insufficiency(&self) -> bool {
        matches!(
            self,
            Error::Underdetermined { .. } | Error::EmptyDataset(_) | Error::ZeroTotal
        )
    }
}
