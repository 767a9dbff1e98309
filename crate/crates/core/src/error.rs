use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = QditError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum QditError {
    #[error("degenerate embedding: zero-norm vector")]
    DegenerateEmbedding,

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("non-finite value at position {index}")]
    NonFinite { index: usize },

    #[error("index {index} out of range for dataset of {len} points")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("index {index} appears more than once in subset")]
    DuplicateIndex { index: usize },

    #[error("candidate {index} is already selected")]
    AlreadySelected { index: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{path}: {message} (byte offset {offset})")]
    Format {
        path: PathBuf,
        offset: u64,
        message: String,
    },

    #[error("exhaustive search budget exceeded: {subsets} subsets > {budget}")]
    BudgetExceeded { subsets: u128, budget: u128 },

    #[error("embedding service: {0}")]
    Embed(String),

    #[error("embedding service returned HTTP {status} for batch at offset {offset}: {body}")]
    EmbedHttp {
        status: u16,
        offset: usize,
        body: String,
    },

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
}

impl QditError {
    pub(crate) fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        QditError::Io {
            context: context.into(),
            source,
        }
    }
}
