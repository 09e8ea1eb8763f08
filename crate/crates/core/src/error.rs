use std::path::PathBuf;

/// Errors raised by the estimation engine and the registry reader.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("degenerate data: {0}")]
    DegenerateData(String),

    #[error("hyperparameters not identifiable: {0}")]
    NonIdentifiable(String),

    #[error("numeric failure: {message}")]
    NumericFailure {
        message: String,
        /// Iterations, last objective values, or other context for debugging.
        diagnostics: Vec<String>,
    },

    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed registry header: {0}")]
    MalformedHeader(String),

    #[error("malformed registry data: {0}")]
    MalformedData(String),

    #[error("no rows survived filtering ({rows_in} rows read)")]
    NoSurvivingRows { rows_in: usize },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn numeric(msg: impl Into<String>, diagnostics: Vec<String>) -> Self {
        Error::NumericFailure {
            message: msg.into(),
            diagnostics,
        }
    }

    /// Coarse classification used by front ends to pick an exit status.
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::InvalidArgument(_) => ErrorKind::Usage,
            Error::NumericFailure { .. } => ErrorKind::Numeric,
            _ => ErrorKind::Data,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Usage,
    Data,
    Numeric,
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
