use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = TsrlError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum TsrlError {
    #[error("dimension mismatch: expected {expected}, got {actual} ({context})")]
    DimensionMismatch {
        expected: usize,
        actual: usize,
        context: &'static str,
    },

    /// A caller broke an operation's precondition.
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("metric undefined: {0}")]
    UndefinedMetric(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("malformed {what}: {detail}")]
    Format { what: &'static str, detail: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("run {run} failed: {source}")]
    RunFailed {
        run: String,
        #[source]
        source: Box<TsrlError>,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl TsrlError {
    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        TsrlError::Contract(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        TsrlError::Config(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        TsrlError::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad inputs rather than numerical failure.
    pub fn is_usage(&self) -> bool {
        if let TsrlError::RunFailed { source, .. } = self {
            return source.is_usage();
        }
        matches!(
            self,
            TsrlError::Config(_)
                | TsrlError::Format { .. }
                | TsrlError::UndefinedMetric(_)
                | TsrlError::DimensionMismatch { .. }
                | TsrlError::Json(_)
        )
    }
}
