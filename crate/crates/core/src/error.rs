use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: parse error at {locus}: {message}")]
    Format {
        path: String,
        locus: String,
        message: String,
    },

    #[error("invalid record {record}: {message}")]
    Validation { record: String, message: String },

    #[error("labels not present in the model's label schema: {}", unknown.join(", "))]
    SchemaMismatch { unknown: Vec<String> },

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("encoding failed for sentence {sentence_id}: {message}")]
    Encoding { sentence_id: String, message: String },

    #[error("non-finite {component} loss in batch {batch} (epoch {epoch})")]
    NonFinite {
        epoch: usize,
        batch: usize,
        component: String,
    },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad user input (files, labels, arguments)
    /// rather than failures while running.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Format { .. }
                | Error::Validation { .. }
                | Error::SchemaMismatch { .. }
                | Error::Argument(_)
                | Error::Config(_)
        )
    }
}
