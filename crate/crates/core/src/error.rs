use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("schema error: missing required column `{0}`")]
    MissingColumn(String),

    #[error("validation error on line {line}: {message}")]
    Row { line: u64, message: String },

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("POI token `{0}` is not in the vocabulary")]
    UnknownPoi(String),

    #[error("value out of range: {0}")]
    OutOfRange(String),

    #[error("agent {0} not found")]
    AgentNotFound(u64),

    #[error("agent {agent}, staypoint {index}: {source}")]
    Staypoint {
        agent: u64,
        index: usize,
        source: Box<Error>,
    },

    #[error("training diverged at epoch {epoch}, batch {batch}: {detail}")]
    Diverged {
        epoch: usize,
        batch: usize,
        detail: String,
    },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
