//! Scoring backends: `log P(continuation | prefix)`.
//!
//! [`Scorer`] is the single interface the predictors use. Implementations:
//!
//! - [`RemoteScorer`]: an echo-logprob completions endpoint.
//! - [`HashMockScorer`]: a pure hash of the two strings, for plumbing tests.
//! - [`PlantedScorer`]: a synthetic world with a gold signal and per-template
//!   bias, driven by prompt metadata instead of prompt text.
//! - [`ScriptedScorer`]: an exact lookup table loaded from a fixture file.
//!
//! [`CachedScorer`] wraps any of them with a persistent, transparent cache.

mod cache;
mod mock;
mod remote;

pub use cache::{CachedScorer, ScoreCache};
pub use mock::{HashMockScorer, PlantedParams, PlantedScorer, ScriptedEntry, ScriptedScorer};
pub use remote::{continuation_logprob, parse_completion, Normalization, OffsetUnit, RemoteConfig, RemoteScorer};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::render::{PromptMeta, RenderedPrompt};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRequest {
    pub prefix: String,
    pub continuation: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub meta: Option<PromptMeta>,
}

impl ScoreRequest {
    pub fn new(prefix: impl Into<String>, continuation: impl Into<String>) -> Self {
        Self { prefix: prefix.into(), continuation: continuation.into(), meta: None }
    }
}

impl From<RenderedPrompt> for ScoreRequest {
    fn from(p: RenderedPrompt) -> Self {
        Self { prefix: p.prefix, continuation: p.continuation, meta: Some(p.meta) }
    }
}

impl From<&RenderedPrompt> for ScoreRequest {
    fn from(p: &RenderedPrompt) -> Self {
        p.clone().into()
    }
}

/// One scored token of an echoed sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenScore {
    pub token_text: String,
    /// Natural-log probability; `None` where the server reports no value
    /// (typically the first token).
    pub logprob: Option<f64>,
    /// Byte offset of the token start within `prefix + continuation`.
    pub char_offset: usize,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum BackendError {
    #[error("transport failure after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },

    #[error("http status {status} after {attempts} attempt(s): {body}")]
    Status { status: u16, attempts: u32, body: String },

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("token starting at byte {token_offset} straddles the continuation boundary at byte {boundary}")]
    BoundaryConflict { token_offset: usize, boundary: usize },

    #[error("no tokens fall inside the continuation span")]
    EmptyContinuationSpan,

    #[error("no scripted score for prefix {prefix:?} / continuation {continuation:?}")]
    ScriptMiss { prefix: String, continuation: String },

    #[error("request is missing metadata required by this backend: {0}")]
    MissingMeta(&'static str),

    #[error("empty continuation")]
    EmptyContinuation,

    #[error("cache: {0}")]
    Cache(String),
}

pub trait Scorer: Send + Sync {
    /// Stable identity used in cache keys and run records.
    fn identity(&self) -> String;

    fn score(&self, request: &ScoreRequest) -> Result<f64, BackendError>;

    /// Whether scores depend on [`ScoreRequest::meta`]. Caches key on the
    /// metadata for such backends.
    fn reads_meta(&self) -> bool {
        false
    }
}

impl<S: Scorer + ?Sized> Scorer for &S {
    fn identity(&self) -> String {
        (**self).identity()
    }
    fn score(&self, request: &ScoreRequest) -> Result<f64, BackendError> {
        (**self).score(request)
    }
    fn reads_meta(&self) -> bool {
        (**self).reads_meta()
    }
}

impl<S: Scorer + ?Sized> Scorer for Box<S> {
    fn identity(&self) -> String {
        (**self).identity()
    }
    fn score(&self, request: &ScoreRequest) -> Result<f64, BackendError> {
        (**self).score(request)
    }
    fn reads_meta(&self) -> bool {
        (**self).reads_meta()
    }
}

impl<S: Scorer + ?Sized> Scorer for std::sync::Arc<S> {
    fn identity(&self) -> String {
        (**self).identity()
    }
    fn score(&self, request: &ScoreRequest) -> Result<f64, BackendError> {
        (**self).score(request)
    }
    fn reads_meta(&self) -> bool {
        (**self).reads_meta()
    }
}

/// Scores every request; element `i` of the result belongs to `requests[i]`.
/// The first failing request (by index) is reported.
pub fn score_batch<S: Scorer + ?Sized>(scorer: &S, requests: &[ScoreRequest]) -> Result<Vec<f64>, Error> {
    if requests.is_empty() {
        return Err(Error::invalid("score_batch needs at least one request"));
    }
    let results: Vec<Result<f64, BackendError>> = requests.par_iter().map(|r| scorer.score(r)).collect();
    results.into_iter().enumerate().map(|(index, r)| r.map_err(|source| Error::InBatch { index, source })).collect()
}

/// Scores a request, retrying once with a single space shifted across the
/// prefix/continuation boundary when the backend reports a token straddling
/// it. Returns the score and whether the shift was applied.
pub fn score_with_boundary_fix<S: Scorer + ?Sized>(
    scorer: &S,
    request: &ScoreRequest,
) -> Result<(f64, bool), BackendError> {
    match scorer.score(request) {
        Err(BackendError::BoundaryConflict { .. }) => {
            let adjusted = shift_boundary_space(request).ok_or(BackendError::BoundaryConflict {
                token_offset: request.prefix.len(),
                boundary: request.prefix.len(),
            })?;
            scorer.score(&adjusted).map(|s| (s, true))
        }
        other => other.map(|s| (s, false)),
    }
}

/// Moves a trailing prefix space to the front of the continuation, or failing
/// that a leading continuation space to the end of the prefix.
pub fn shift_boundary_space(request: &ScoreRequest) -> Option<ScoreRequest> {
    let mut adjusted = request.clone();
    if let Some(stripped) = request.prefix.strip_suffix(' ') {
        adjusted.prefix = stripped.to_string();
        adjusted.continuation = format!(" {}", request.continuation);
        Some(adjusted)
    } else if let Some(stripped) = request.continuation.strip_prefix(' ') {
        if stripped.is_empty() {
            return None;
        }
        adjusted.prefix.push(' ');
        adjusted.continuation = stripped.to_string();
        Some(adjusted)
    } else {
        None
    }
}
