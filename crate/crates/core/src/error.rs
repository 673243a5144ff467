//! Crate-wide error type.

use thiserror::Error;

use crate::contrastive::TrainingHistory;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Ingestion rejected a batch because track ids collide.
    #[error("duplicate track ids: {}", ids.join(", "))]
    DuplicateTrackIds { ids: Vec<String> },

    /// A structured file could not be parsed; reports the first bad line.
    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },

    /// A precondition on an operation's inputs was violated.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("audio error: {0}")]
    Audio(String),

    /// Training data admits no signal (e.g. all-negative labels).
    #[error("nothing to learn: {0}")]
    DegenerateTraining(String),

    /// Validation scoring failed mid-training; the history covers the
    /// epochs completed before the abort.
    #[error("validation evaluation failed at epoch {epoch}: {message}")]
    ValidationAborted {
        epoch: usize,
        message: String,
        history: Box<TrainingHistory>,
    },
}

impl Error {
    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }
}
