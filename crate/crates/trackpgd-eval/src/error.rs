//! Error type for the evaluation harness.

use std::path::PathBuf;

use thiserror::Error;

/// Everything the harness can fail with, split by phase so callers can map
/// configuration problems and runtime problems to different exit codes.
#[derive(Debug, Error)]
pub enum Error {
    /// Dataset directory or file violates the documented layout.
    #[error("ingestion error at {path}: {reason}")]
    Ingestion { path: PathBuf, reason: String },

    /// Config file fails schema validation or internal consistency checks.
    #[error("config error: {reason}")]
    Config { reason: String },

    /// A metric was asked to do something outside its domain.
    #[error("metric error: {reason}")]
    Metric { reason: String },

    /// An expected artifact (records, masks, report) is missing or corrupt.
    #[error("artifact error at {path}: {reason}")]
    Artifact { path: PathBuf, reason: String },

    #[error(transparent)]
    Core(#[from] trackpgd_core::Error),

    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Whether this error is a configuration/validation problem (exit code
    /// 1) as opposed to a runtime failure (exit code 2).
    pub fn is_config(&self) -> bool {
        matches!(self, Error::Config { .. })
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn ingestion(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Ingestion {
            path: path.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn config(reason: impl Into<String>) -> Self {
        Error::Config {
            reason: reason.into(),
        }
    }

    pub(crate) fn artifact(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Artifact {
            path: path.into(),
            reason: reason.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
