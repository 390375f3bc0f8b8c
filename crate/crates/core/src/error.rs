use std::path::PathBuf;

use thiserror::Error;

/// Failures while talking to a model service.
#[derive(Debug, Error)]
pub enum BackendError {
    #[error("network failure after {attempts} attempt(s): {message}")]
    Network { attempts: u32, message: String },
    #[error("server returned status {status} after {attempts} attempt(s): {body}")]
    Status {
        status: u16,
        attempts: u32,
        body: String,
    },
    #[error("malformed response body: {0}")]
    MalformedBody(String),
    #[error("logprobs were requested but the response carries none")]
    MissingLogprobs,
    #[error("constrained output was not Yes/No: {raw:?}")]
    ConstraintViolated { raw: String },
    #[error("no list-like content in model output: {raw:?}")]
    Unparseable { raw: String },
    #[error("backend kind {kind} cannot serve {operation}")]
    Unsupported { kind: String, operation: &'static str },
    #[error("mock backend failure: {0}")]
    Mock(String),
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Line {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error(
        "document {doc_id}: entity {entity:?} at [{start}, {end}) does not match document text {found:?}"
    )]
    SpanMismatch {
        doc_id: String,
        entity: String,
        start: usize,
        end: usize,
        found: String,
    },
    #[error("unknown polarity {0:?}")]
    UnknownPolarity(String),
    #[error("invalid {what}: {message}")]
    Invalid { what: &'static str, message: String },
    #[error("no {origin} sub-type list for target {target:?}")]
    UnknownDecomposition { origin: String, target: String },
    #[error("unknown template id {0:?}")]
    UnknownTemplate(String),
    #[error("template {template} is missing slot {slot:?}")]
    MissingSlot { template: String, slot: String },
    #[error("malformed BIO output: {0}")]
    Bio(String),
    #[error("run directory {dir}: {missing} missing")]
    RunFileMissing { dir: PathBuf, missing: &'static str },
    #[error("run directory {dir}: {message}")]
    RunDir { dir: PathBuf, message: String },
    #[error("configuration: {0}")]
    Config(String),
    #[error("run interrupted after {completed} of {total} units; rerun with the same output directory to resume")]
    Interrupted { completed: usize, total: usize },
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(what: &'static str, message: impl Into<String>) -> Self {
        Error::Invalid {
            what,
            message: message.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
