use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument or configuration value is outside its admissible range.
    #[error("invalid parameter: {0}")]
    Parameter(String),

    /// A CSV or JSON input could not be accepted.
    #[error("ingestion error at row {row}: {message}")]
    Ingestion { row: usize, message: String },

    /// The excitation phase did not produce persistently exciting data.
    #[error("excitation failed: {0}")]
    Excitation(String),

    /// A receding-horizon run hit a step whose program could not be solved.
    #[error("closed loop aborted at step {step}: {message}")]
    Runtime { step: usize, message: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::Parameter(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
