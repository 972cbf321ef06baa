use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("empty dictionary")]
    EmptyDictionary,

    #[error("validation error: {0}")]
    Validation(String),

    #[error("empty input")]
    EmptyInput,

    #[error("empty input at batch index {index}")]
    EmptyInputAt { index: usize },

    #[error("degenerate embedding (norm {norm:e} below threshold)")]
    DegenerateEmbedding { norm: f64 },

    #[error("out of vocabulary: {0:?}")]
    OutOfVocabulary(String),

    #[error("dimension mismatch at entry {index}: expected {expected}, got {actual}")]
    DimensionMismatch {
        index: usize,
        expected: usize,
        actual: usize,
    },

    #[error("invalid config: {0}")]
    Config(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("training diverged at stage {stage}, epoch {epoch}, batch {batch}: loss is {loss}")]
    Diverged {
        stage: usize,
        epoch: usize,
        batch: usize,
        loss: f64,
    },

    #[error("no linkable examples")]
    NoLinkableExamples,

    #[error("corrupt {what}: {message}")]
    Format { what: &'static str, message: String },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            message: message.into(),
        }
    }
}
