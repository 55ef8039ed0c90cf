use std::path::PathBuf;

use thiserror::Error;

use crate::learners::ScoreCheckpoint;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed {what}: {detail}")]
    Parse { what: &'static str, detail: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("training labels contain a single class")]
    SingleClass,

    #[error("non-finite feature value in row {row}")]
    NonFinite { row: usize },

    #[error("duplicate id {0}")]
    DuplicateId(String),

    #[error("unknown title id {0}")]
    UnknownTitle(String),

    #[error("label conflict: {0}")]
    LabelConflict(String),

    #[error("external scorer: {0}")]
    Scorer(String),

    #[error("scoring interrupted after {} of {total} titles: {reason}", checkpoint.completed())]
    ScoringInterrupted {
        checkpoint: ScoreCheckpoint,
        total: usize,
        reason: String,
    },

    #[error("invalid state: {0}")]
    State(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(what: &'static str, detail: impl ToString) -> Self {
        Error::Parse {
            what,
            detail: detail.to_string(),
        }
    }
}
