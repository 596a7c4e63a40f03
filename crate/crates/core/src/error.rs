use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Broad failure category, used by the command line to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    /// Bad parameters supplied by the caller.
    Usage,
    /// Input data that is missing, malformed or inconsistent.
    Data,
    /// A numerical procedure could not produce a usable result.
    Numerical,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("row {row}: {message}")]
    MalformedRow { row: usize, message: String },

    #[error("missing column `{0}`")]
    MissingColumn(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("invalid parameter `{name}`: {message}")]
    InvalidParameter { name: &'static str, message: String },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("record {0} has no pool label")]
    MissingPool(usize),

    #[error("no usable quality regions ({skipped} skipped)")]
    NoUsableRegions { skipped: usize },

    #[error("condition {condition} has only {count} row(s); at least 2 are needed")]
    SingletonCondition { condition: String, count: usize },

    #[error("design matrix is rank deficient; null directions: {directions}")]
    RankDeficient { directions: String },

    #[error("unsupported covariance parametrization `{0}`")]
    UnsupportedParametrization(String),

    #[error("unknown covariance parametrization `{0}`")]
    UnknownParametrization(String),

    #[error("mixture fit failed: {0}")]
    FitFailed(String),

    #[error("every model in the selection grid failed to fit")]
    AllFitsFailed,

    #[error("unsupported document format `{found}` (expected `{expected}`)")]
    Format { expected: &'static str, found: String },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn param(name: &'static str, message: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            message: message.into(),
        }
    }

    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::InvalidParameter { .. }
            | Error::UnsupportedParametrization(_)
            | Error::UnknownParametrization(_) => ErrorKind::Usage,
            Error::FitFailed(_) | Error::AllFitsFailed | Error::RankDeficient { .. } => {
                ErrorKind::Numerical
            }
            _ => ErrorKind::Data,
        }
    }
}
