use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("parse error at row {row}, column `{column}`: {message}")]
    Parse {
        row: usize,
        column: String,
        message: String,
    },
    #[error("structural error at row {row}: {message}")]
    Structure { row: usize, message: String },
    #[error("schema error: {0}")]
    Schema(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("size error: {0}")]
    Size(String),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("invalid prediction at row {row}: {message}")]
    Validation { row: usize, message: String },
    #[error("data error: {0}")]
    Data(String),
    #[error("training error: {0}")]
    Training(String),
    #[error("matrix is rank deficient (pivot ratio {ratio:e})")]
    Rank { ratio: f64 },
    #[error("loss diverged at iteration {iteration}")]
    Divergence { iteration: usize },
    #[error("inconsistent probe scores: inferred proportion {0}")]
    Inconsistency(f64),
}

/// Coarse classification of errors, used for CLI exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Numerical,
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Config(_) | Error::Size(_) => ErrorKind::Config,
            Error::Rank { .. } | Error::Divergence { .. } | Error::Inconsistency(_) => {
                ErrorKind::Numerical
            }
            _ => ErrorKind::Data,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
