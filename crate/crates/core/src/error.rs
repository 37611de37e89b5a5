use std::path::PathBuf;

use thiserror::Error;

use crate::tensor::TensorError;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] TensorError),

    #[error("invalid path: {0}")]
    InvalidPath(String),

    #[error("target longer than lattice: {target} tokens for {steps} steps")]
    TargetTooLong { target: usize, steps: usize },

    #[error("target must have at least 2 tokens, got {0}")]
    TargetTooShort(usize),

    #[error("path enumeration refused for S = {0} (limit 12)")]
    EnumerationTooLarge(usize),

    #[error("token id {id} outside vocabulary of size {vocab}")]
    OutOfVocabulary { id: usize, vocab: usize },

    #[error("sequence of length {len} exceeds max_positions {max}")]
    TooLong { len: usize, max: usize },

    #[error("empty {0}")]
    Empty(&'static str),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("unroutable direction {from} -> {to}")]
    Unroutable { from: String, to: String },

    #[error("unknown language {name}; known languages: {known}")]
    UnknownLanguage { name: String, known: String },

    #[error("checkpoint format: {0}")]
    Format(String),

    #[error("non-finite loss at step {step} (direction {direction}, sentences {sentences:?})")]
    NonFiniteLoss {
        step: u64,
        direction: String,
        sentences: Vec<usize>,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
