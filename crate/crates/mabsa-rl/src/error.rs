//! Crate-wide error type and result alias.

use std::path::PathBuf;

/// Failure to extract an ordered event set from an LLM completion.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ParseFailure {
    #[error("no JSON object found in completion")]
    NoJsonObject,
    #[error("key {0:?} does not match the \"Event N\" pattern")]
    BadKey(String),
    #[error("duplicate event number {0}")]
    DuplicateEvent(u64),
}

/// Errors raised by the LLM client.
#[derive(Debug, thiserror::Error)]
pub enum LlmError {
    #[error("missing API credentials: set {0}")]
    MissingCredentials(String),
    #[error("request failed: {0}")]
    Request(String),
    #[error("unexpected response shape: {0}")]
    BadResponse(String),
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("missing file: {0}")]
    MissingFile(PathBuf),
    #[error("missing image: {0}")]
    MissingImage(PathBuf),
    #[error("record {id}: invalid {field}: {message}")]
    Record {
        id: String,
        field: String,
        message: String,
    },
    #[error("image {path}: {message}")]
    Image { path: PathBuf, message: String },
    #[error(transparent)]
    Parse(#[from] ParseFailure),
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error("config error: {0}")]
    Config(String),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("training failure: {0}")]
    Train(String),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn record(id: impl Into<String>, field: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Record {
            id: id.into(),
            field: field.into(),
            message: msg.into(),
        }
    }

    /// Process exit code for the CLI: 1 usage/config, 2 data, 3 training.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 1,
            Error::Train(_) => 3,
            _ => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
