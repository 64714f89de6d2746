//! Crate-wide error type.

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("validation: {0}")]
    Validation(String),

    #[error("unknown memory id {0}")]
    UnknownMemory(u64),

    #[error("snapshot format_version {found} is not supported (expected {supported})")]
    VersionMismatch { found: u32, supported: u32 },

    #[error("malformed snapshot: {0}")]
    MalformedSnapshot(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("api key environment variable `{0}` is not set")]
    MissingApiKey(String),

    #[error("transport failure after {attempts} attempt(s): {detail}")]
    Transport { attempts: u32, detail: String },

    #[error("http status {status}: {body}")]
    HttpStatus { status: u16, body: String },

    #[error("malformed provider response: {0}")]
    BadProviderResponse(String),

    #[error("empty {0} in chat request")]
    EmptyPrompt(&'static str),

    #[error("no scripted response for role `{0}`")]
    ScriptMiss(String),

    #[error("no JSON object found in completion: {snippet}")]
    NoJson { snippet: String },

    #[error("missing field `{field}` in completion: {snippet}")]
    MissingField {
        field: &'static str,
        snippet: String,
    },

    #[error("field `{field}` has wrong type (expected {expected}): {snippet}")]
    WrongType {
        field: &'static str,
        expected: &'static str,
        snippet: String,
    },

    #[error("metric undefined: {0}")]
    UndefinedMetric(&'static str),

    #[error("dataset error at {path}: {detail}")]
    Dataset { path: String, detail: String },

    #[error("config error: {0}")]
    Config(String),
}

impl Error {
    /// Wrap an io error with the path it happened on.
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
