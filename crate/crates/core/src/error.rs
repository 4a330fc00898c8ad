use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the extraction library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("document {doc_id}: invalid {field}: {message}")]
    Validation {
        doc_id: String,
        field: String,
        message: String,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid tag sequence at position {position}: {message}")]
    InvalidTags { position: usize, message: String },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("{0}")]
    Other(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
