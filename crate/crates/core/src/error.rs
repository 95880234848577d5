use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: line {line}: {message}")]
    Parse {
        path: String,
        line: u64,
        message: String,
    },

    #[error("schema violation: {0}")]
    Schema(String),

    #[error("duplicate record_id `{0}`")]
    DuplicateRecord(String),

    #[error("label out of range: {0}")]
    LabelOutOfRange(String),

    #[error("invalid selector: {0}")]
    Selector(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("undefined: {0}")]
    Undefined(String),

    #[error("config error in {path}: {message}")]
    Config { path: String, message: String },

    #[error("llm corpus does not mirror the human corpus: {0}")]
    Mirror(String),

    #[error("endpoint error: {0}")]
    Endpoint(String),

    #[error("cache error at {path}: {message}")]
    Cache { path: PathBuf, message: String },

    #[error("I/O error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl std::fmt::Display, line: u64, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.to_string(),
            line,
            message: message.into(),
        }
    }

    /// True for failures talking to an LLM endpoint, as opposed to bad data.
    pub fn is_endpoint(&self) -> bool {
        matches!(self, Error::Endpoint(_))
    }
}
