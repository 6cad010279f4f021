//! Client for OpenAI-style `/completions` endpoints that echo the prompt with
//! per-token logprobs.
//!
//! The full sequence `prefix + continuation` is sent as the prompt with
//! `max_tokens: 0, echo: true, logprobs: 1`; the continuation score is the sum
//! of logprobs of the tokens that start at or after the prefix boundary.

use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{BackendError, ScoreRequest, Scorer, TokenScore};

/// How token logprobs inside the continuation span are combined.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    /// Plain sum (the default; no length normalization).
    #[default]
    Sum,
    /// Sum divided by the number of continuation tokens.
    TokenMean,
}

/// Unit of the `text_offset` values reported by the server.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OffsetUnit {
    /// Unicode scalar values, as reported by Python-based servers.
    #[default]
    Chars,
    Bytes,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RemoteConfig {
    /// Full URL of the completions endpoint.
    pub endpoint: String,
    pub model: String,
    /// Environment variable holding a bearer token, if any.
    pub api_key_env: String,
    pub max_retries: u32,
    pub retry_backoff_ms: u64,
    pub timeout_secs: u64,
    pub max_in_flight: usize,
    pub normalization: Normalization,
    pub offset_unit: OffsetUnit,
}

impl Default for RemoteConfig {
    fn default() -> Self {
        Self {
            endpoint: "http://127.0.0.1:8000/v1/completions".into(),
            model: String::new(),
            api_key_env: "TEMPLAR_API_KEY".into(),
            max_retries: 3,
            retry_backoff_ms: 250,
            timeout_secs: 120,
            max_in_flight: 8,
            normalization: Normalization::Sum,
            offset_unit: OffsetUnit::Chars,
        }
    }
}

#[derive(Debug, Deserialize)]
struct CompletionResponse {
    choices: Vec<CompletionChoice>,
}

#[derive(Debug, Deserialize)]
struct CompletionChoice {
    logprobs: Option<WireLogprobs>,
}

#[derive(Debug, Deserialize)]
struct WireLogprobs {
    tokens: Vec<String>,
    token_logprobs: Vec<Option<f64>>,
    text_offset: Vec<usize>,
}

/// Parses an echo response body into per-token scores with byte offsets into `text`.
pub fn parse_completion(body: &str, text: &str, unit: OffsetUnit) -> Result<Vec<TokenScore>, BackendError> {
    let resp: CompletionResponse =
        serde_json::from_str(body).map_err(|e| BackendError::Protocol(format!("bad response json: {e}")))?;
    let choice = resp.choices.into_iter().next().ok_or_else(|| BackendError::Protocol("no choices".into()))?;
    let lp = choice.logprobs.ok_or_else(|| BackendError::Protocol("response has no logprobs".into()))?;
    if lp.tokens.len() != lp.token_logprobs.len() || lp.tokens.len() != lp.text_offset.len() {
        return Err(BackendError::Protocol("logprob arrays differ in length".into()));
    }
    let byte_offsets: Vec<usize> = match unit {
        OffsetUnit::Bytes => lp.text_offset,
        OffsetUnit::Chars => {
            let starts: Vec<usize> = text.char_indices().map(|(b, _)| b).chain(std::iter::once(text.len())).collect();
            lp.text_offset
                .iter()
                .map(|&c| {
                    starts.get(c).copied().ok_or_else(|| BackendError::Protocol(format!("offset {c} beyond text")))
                })
                .collect::<Result<_, _>>()?
        }
    };
    let mut tokens = Vec::with_capacity(lp.tokens.len());
    for ((token_text, logprob), char_offset) in lp.tokens.into_iter().zip(lp.token_logprobs).zip(byte_offsets) {
        if let Some(prev) = tokens.last().map(|t: &TokenScore| t.char_offset) {
            if char_offset <= prev {
                return Err(BackendError::Protocol("token offsets are not strictly increasing".into()));
            }
        }
        tokens.push(TokenScore { token_text, logprob, char_offset });
    }
    Ok(tokens)
}

/// Sums the logprobs of tokens starting at or after `prefix_len`.
///
/// A token that starts inside the prefix but ends past the boundary is a
/// [`BackendError::BoundaryConflict`]; no partial credit is given.
pub fn continuation_logprob(
    tokens: &[TokenScore],
    prefix_len: usize,
    text_len: usize,
    normalization: Normalization,
) -> Result<f64, BackendError> {
    let mut sum = 0.0;
    let mut count = 0usize;
    for (i, tok) in tokens.iter().enumerate() {
        let end = tokens.get(i + 1).map_or(text_len, |t| t.char_offset);
        if tok.char_offset < prefix_len {
            if end > prefix_len {
                return Err(BackendError::BoundaryConflict { token_offset: tok.char_offset, boundary: prefix_len });
            }
            continue;
        }
        let lp = tok.logprob.ok_or_else(|| {
            BackendError::Protocol(format!("missing logprob for continuation token {:?}", tok.token_text))
        })?;
        sum += lp;
        count += 1;
    }
    if count == 0 {
        return Err(BackendError::EmptyContinuationSpan);
    }
    Ok(match normalization {
        Normalization::Sum => sum,
        Normalization::TokenMean => sum / count as f64,
    })
}

/// Counting semaphore bounding concurrent HTTP requests.
#[derive(Debug)]
struct Gate {
    slots: Mutex<usize>,
    freed: Condvar,
}

impl Gate {
    fn new(n: usize) -> Self {
        Self { slots: Mutex::new(n.max(1)), freed: Condvar::new() }
    }

    fn acquire(&self) -> GateGuard<'_> {
        let mut slots = self.slots.lock().expect("gate lock");
        while *slots == 0 {
            slots = self.freed.wait(slots).expect("gate lock");
        }
        *slots -= 1;
        GateGuard { gate: self }
    }
}

struct GateGuard<'a> {
    gate: &'a Gate,
}

impl Drop for GateGuard<'_> {
    fn drop(&mut self) {
        *self.gate.slots.lock().expect("gate lock") += 1;
        self.gate.freed.notify_one();
    }
}

pub struct RemoteScorer {
    config: RemoteConfig,
    client: reqwest::blocking::Client,
    api_key: Option<String>,
    gate: Gate,
}

impl RemoteScorer {
    pub fn new(config: RemoteConfig) -> Result<Self, BackendError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| BackendError::Transport { attempts: 0, message: e.to_string() })?;
        let api_key = std::env::var(&config.api_key_env).ok().filter(|k| !k.is_empty());
        let gate = Gate::new(config.max_in_flight);
        Ok(Self { config, client, api_key, gate })
    }

    pub fn config(&self) -> &RemoteConfig {
        &self.config
    }

    /// Sends one echo request for `text`, retrying transport failures,
    /// HTTP 429 and 5xx up to the configured budget.
    pub fn echo(&self, text: &str) -> Result<Vec<TokenScore>, BackendError> {
        let body = json!({
            "model": self.config.model,
            "prompt": text,
            "max_tokens": 0,
            "echo": true,
            "logprobs": 1,
        });
        let max_attempts = self.config.max_retries + 1;
        let mut attempt = 0;
        loop {
            attempt += 1;
            let outcome = {
                let _slot = self.gate.acquire();
                let mut req = self.client.post(&self.config.endpoint).json(&body);
                if let Some(key) = &self.api_key {
                    req = req.bearer_auth(key);
                }
                req.send().and_then(|r| {
                    let status = r.status();
                    r.text().map(|t| (status, t))
                })
            };
            let retry_err = match outcome {
                Ok((status, text_body)) if status.is_success() => {
                    return parse_completion(&text_body, text, self.config.offset_unit);
                }
                Ok((status, text_body)) => {
                    let err = BackendError::Status { status: status.as_u16(), attempts: attempt, body: text_body };
                    if !(status.as_u16() == 429 || status.is_server_error()) {
                        return Err(err);
                    }
                    err
                }
                Err(e) => BackendError::Transport { attempts: attempt, message: e.to_string() },
            };
            if attempt >= max_attempts {
                return Err(retry_err);
            }
            let backoff = self.config.retry_backoff_ms.saturating_mul(1 << (attempt - 1).min(10));
            std::thread::sleep(Duration::from_millis(backoff));
        }
    }
}

impl Scorer for RemoteScorer {
    fn identity(&self) -> String {
        let norm = match self.config.normalization {
            Normalization::Sum => "",
            Normalization::TokenMean => "#token-mean",
        };
        format!("remote:{}#{}{}", self.config.endpoint, self.config.model, norm)
    }

    fn score(&self, request: &ScoreRequest) -> Result<f64, BackendError> {
        if request.continuation.is_empty() {
            return Err(BackendError::EmptyContinuation);
        }
        let text = format!("{}{}", request.prefix, request.continuation);
        let tokens = self.echo(&text)?;
        continuation_logprob(&tokens, request.prefix.len(), text.len(), self.config.normalization)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tok(text: &str, lp: Option<f64>, off: usize) -> TokenScore {
        TokenScore { token_text: text.into(), logprob: lp, char_offset: off }
    }

    #[test]
    fn only_continuation_tokens_are_summed() {
        // "The movie was" + " great": tokens at 0, 4, 9; boundary at 9
        let tokens = [tok("The", None, 0), tok(" movie", Some(-3.0), 4), tok(" great", Some(-0.75), 9)];
        assert_eq!(continuation_logprob(&tokens, 9, 15, Normalization::Sum).unwrap(), -0.75);
    }

    #[test]
    fn straddling_token_is_an_error() {
        let tokens = [tok("It", None, 0), tok(" was", Some(-1.0), 2), tok(" great", Some(-2.0), 6)];
        // boundary at 7 ("It was " + "great"): " great" starts at 6 and ends at 12
        assert!(matches!(
            continuation_logprob(&tokens, 7, 12, Normalization::Sum),
            Err(BackendError::BoundaryConflict { token_offset: 6, boundary: 7 })
        ));
    }

    #[test]
    fn empty_span_and_missing_logprob() {
        let tokens = [tok("abc", None, 0)];
        assert!(matches!(
            continuation_logprob(&tokens, 3, 3, Normalization::Sum),
            Err(BackendError::EmptyContinuationSpan)
        ));
        let tokens = [tok("a", Some(-1.0), 0), tok("b", None, 1)];
        assert!(matches!(continuation_logprob(&tokens, 1, 2, Normalization::Sum), Err(BackendError::Protocol(_))));
    }

    #[test]
    fn token_mean_normalization() {
        let tokens = [tok("a", None, 0), tok("b", Some(-1.0), 1), tok("c", Some(-3.0), 2)];
        assert_eq!(continuation_logprob(&tokens, 1, 3, Normalization::TokenMean).unwrap(), -2.0);
    }

    #[test]
    fn char_offsets_are_converted_to_bytes() {
        let text = "é x";
        let body =
            r#"{"choices":[{"logprobs":{"tokens":["é"," x"],"token_logprobs":[null,-1.0],"text_offset":[0,1]}}]}"#;
        let tokens = parse_completion(body, text, OffsetUnit::Chars).unwrap();
        assert_eq!(tokens[1].char_offset, 2);
        let tokens = parse_completion(body, text, OffsetUnit::Bytes).unwrap();
        assert_eq!(tokens[1].char_offset, 1);
    }

    #[test]
    fn malformed_responses() {
        assert!(parse_completion("{}", "x", OffsetUnit::Bytes).is_err());
        let body = r#"{"choices":[{"logprobs":{"tokens":["a","b"],"token_logprobs":[null],"text_offset":[0,1]}}]}"#;
        assert!(matches!(parse_completion(body, "ab", OffsetUnit::Bytes), Err(BackendError::Protocol(_))));
        let body = r#"{"choices":[{"logprobs":{"tokens":["a","b"],"token_logprobs":[null,-1],"text_offset":[1,1]}}]}"#;
        assert!(matches!(parse_completion(body, "ab", OffsetUnit::Bytes), Err(BackendError::Protocol(_))));
    }
}
