use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: malformed file: {reason}")]
    MalformedFile { path: PathBuf, reason: String },
    #[error("label {0} refers to no question")]
    DanglingLabel(String),
    #[error(transparent)]
    Core(#[from] ehrsql_core::Error),
    #[error("database {path} unreadable: {reason}")]
    DatabaseUnreadable { path: PathBuf, reason: String },
    #[error("database {0} has no user tables")]
    EmptySchema(PathBuf),
    #[error("request timed out: {0}")]
    Timeout(String),
    #[error("rate limited after {attempts} attempts")]
    RateLimited { attempts: u32 },
    #[error("malformed response: {0}")]
    MalformedResponse(String),
    #[error("transport error: {0}")]
    Transport(String),
    #[error("no recording for model {model_id} and prompt {prompt_hash}")]
    CacheMiss { model_id: String, prompt_hash: String },
    #[error("no {model_id} vector for text {text_hash}")]
    MissingVector { model_id: String, text_hash: String },
    #[error("embedding service error: {0}")]
    ServiceError(String),
    #[error("model {model_id} has no prediction for question {question_id}")]
    MissingPrediction { model_id: String, question_id: String },
    #[error("invalid configuration: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn malformed(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::MalformedFile { path: path.into(), reason: reason.into() }
    }
}
