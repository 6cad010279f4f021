use std::path::PathBuf;

use crate::backend::BackendError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("malformed grammar document: {0}")]
    GrammarParse(String),

    #[error("grammar field `{field}`: {reason}")]
    GrammarInvalid { field: &'static str, reason: String },

    #[error("template id {id} out of range (grammar has {count} templates)")]
    TemplateId { id: u64, count: u64 },

    #[error("cannot sample {requested} templates from a grammar of {available}")]
    SampleSize { requested: usize, available: usize },

    #[error("class index {index} out of range for {classes} classes")]
    ClassIndex { index: usize, classes: usize },

    #[error("rendered continuation is empty")]
    EmptyContinuation,

    #[error("invalid distribution: {0}")]
    Distribution(String),

    #[error("content-free probability of class {class} is zero")]
    ZeroContentFree { class: usize },

    #[error("{0}")]
    InvalidInput(String),

    #[error("{path}:{line}: {reason}")]
    Record { path: PathBuf, line: usize, reason: String },

    #[error("backend: {0}")]
    Backend(#[from] BackendError),

    #[error("template {template_id}: {source}")]
    InTemplate {
        template_id: u64,
        #[source]
        source: Box<Error>,
    },

    #[error("request {index}: {source}")]
    InBatch {
        index: usize,
        #[source]
        source: BackendError,
    },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}
