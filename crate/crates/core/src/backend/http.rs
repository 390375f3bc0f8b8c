//! OpenAI-compatible `/completions` client.

use std::collections::{BTreeMap, HashMap};
use std::sync::atomic::{AtomicU64, Ordering};
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{BackendDescriptor, CompletionBackend, CompletionRequest, CompletionResponse, Constraint};
use crate::error::{BackendError, Error, Result};

/// Number of top candidates requested when log-probabilities are wanted.
const TOP_LOGPROBS: u32 = 20;

#[derive(Debug, Serialize)]
struct WireRequest<'a> {
    #[serde(skip_serializing_if = "Option::is_none")]
    model: Option<&'a str>,
    prompt: &'a str,
    max_tokens: u32,
    temperature: f64,
    top_p: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    logprobs: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    guided_choice: Option<[&'static str; 2]>,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum WireResponse {
    Choices { choices: Vec<WireChoice> },
    Flat {
        text: String,
        #[serde(default)]
        logprobs: Option<HashMap<String, f64>>,
    },
}

#[derive(Debug, Deserialize)]
struct WireChoice {
    text: String,
    #[serde(default)]
    logprobs: Option<WireLogprobs>,
}

#[derive(Debug, Deserialize)]
struct WireLogprobs {
    #[serde(default)]
    top_logprobs: Option<Vec<Option<HashMap<String, f64>>>>,
}

impl WireResponse {
    fn into_parts(self) -> Result<(String, Option<HashMap<String, f64>>), BackendError> {
        match self {
            WireResponse::Choices { choices } => {
                let choice = choices
                    .into_iter()
                    .next()
                    .ok_or_else(|| BackendError::MalformedBody("empty choices".into()))?;
                let first = choice
                    .logprobs
                    .and_then(|lp| lp.top_logprobs)
                    .and_then(|v| v.into_iter().next().flatten());
                Ok((choice.text, first))
            }
            WireResponse::Flat { text, logprobs } => Ok((text, logprobs)),
        }
    }
}

/// Attempt accounting for one client.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct HttpStats {
    pub requests: u64,
    pub attempts: u64,
}

/// Blocking client for an OpenAI-compatible completions endpoint.
///
/// Transient failures (connection errors, timeouts, 429 and 5xx) are retried
/// with exponential backoff; other non-2xx statuses fail immediately.
pub struct HttpBackend {
    client: reqwest::blocking::Client,
    desc: BackendDescriptor,
    endpoint: String,
    requests: AtomicU64,
    attempts: AtomicU64,
}

enum Attempt {
    Done(String),
    Transient(BackendError),
    Fatal(BackendError),
}

impl HttpBackend {
    pub fn new(desc: BackendDescriptor) -> Result<Self> {
        let endpoint = desc
            .endpoint
            .clone()
            .ok_or_else(|| Error::Config(format!("{} backend has no endpoint", desc.kind)))?;
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_millis(desc.timeout_ms))
            .build()
            .map_err(|e| Error::Config(format!("cannot build HTTP client: {e}")))?;
        Ok(HttpBackend {
            client,
            desc,
            endpoint,
            requests: AtomicU64::new(0),
            attempts: AtomicU64::new(0),
        })
    }

    pub fn descriptor(&self) -> &BackendDescriptor {
        &self.desc
    }

    pub fn stats(&self) -> HttpStats {
        HttpStats {
            requests: self.requests.load(Ordering::Relaxed),
            attempts: self.attempts.load(Ordering::Relaxed),
        }
    }

    fn attempt(&self, body: &WireRequest<'_>) -> Attempt {
        self.attempts.fetch_add(1, Ordering::Relaxed);
        let resp = match self.client.post(&self.endpoint).json(body).send() {
            Ok(r) => r,
            Err(e) => {
                return Attempt::Transient(BackendError::Network {
                    attempts: 0,
                    message: e.to_string(),
                })
            }
        };
        let status = resp.status();
        let text = match resp.text() {
            Ok(t) => t,
            Err(e) => {
                return Attempt::Transient(BackendError::Network {
                    attempts: 0,
                    message: e.to_string(),
                })
            }
        };
        if status.is_success() {
            Attempt::Done(text)
        } else {
            let err = BackendError::Status {
                status: status.as_u16(),
                attempts: 0,
                body: text,
            };
            if status.as_u16() == 429 || status.is_server_error() {
                Attempt::Transient(err)
            } else {
                Attempt::Fatal(err)
            }
        }
    }

    fn post(&self, body: &WireRequest<'_>) -> Result<String, BackendError> {
        self.requests.fetch_add(1, Ordering::Relaxed);
        let max = self.desc.retry.max_attempts.max(1);
        let mut attempt = 1;
        loop {
            let err = match self.attempt(body) {
                Attempt::Done(text) => return Ok(text),
                Attempt::Fatal(e) => return Err(with_attempts(e, attempt)),
                Attempt::Transient(e) => e,
            };
            if attempt >= max {
                return Err(with_attempts(err, attempt));
            }
            let backoff = self.desc.retry.base_backoff_ms.saturating_mul(1 << (attempt - 1).min(16));
            log::debug!("attempt {attempt} failed ({err}); retrying in {backoff} ms");
            thread::sleep(Duration::from_millis(backoff));
            attempt += 1;
        }
    }
}

fn with_attempts(err: BackendError, n: u32) -> BackendError {
    match err {
        BackendError::Network { message, .. } => BackendError::Network { attempts: n, message },
        BackendError::Status { status, body, .. } => BackendError::Status {
            status,
            attempts: n,
            body,
        },
        other => other,
    }
}

/// log(sum(exp(x))) over candidate tokens that read as `word`.
fn candidate_logprob(candidates: &HashMap<String, f64>, word: &str) -> f64 {
    let lps: Vec<f64> = candidates
        .iter()
        .filter(|(tok, _)| tok.trim().eq_ignore_ascii_case(word))
        .map(|(_, lp)| *lp)
        .collect();
    let Some(max) = lps.iter().copied().reduce(f64::max) else {
        return f64::NEG_INFINITY;
    };
    max + lps.iter().map(|lp| (lp - max).exp()).sum::<f64>().ln()
}

impl CompletionBackend for HttpBackend {
    fn complete(&self, req: &CompletionRequest) -> Result<CompletionResponse, BackendError> {
        let yes_no = req.constraint == Some(Constraint::YesNo);
        let body = WireRequest {
            model: self.desc.model.as_deref(),
            prompt: &req.prompt,
            max_tokens: req.max_new_tokens,
            temperature: req.temperature,
            top_p: req.top_p,
            logprobs: req.want_logprobs.then_some(TOP_LOGPROBS),
            guided_choice: (yes_no && self.desc.native_yes_no).then_some(["Yes", "No"]),
        };
        let raw = self.post(&body)?;
        let wire: WireResponse =
            serde_json::from_str(&raw).map_err(|e| BackendError::MalformedBody(format!("{e}: {raw}")))?;
        let (text, candidates) = wire.into_parts()?;
        if req.want_logprobs && candidates.as_ref().is_none_or(|c| c.is_empty()) {
            return Err(BackendError::MissingLogprobs);
        }
        if !yes_no {
            return Ok(CompletionResponse {
                text,
                first_token_candidates: candidates.map(|c| c.into_iter().collect::<BTreeMap<_, _>>()),
            });
        }
        if self.desc.native_yes_no && !matches!(text.trim(), "Yes" | "No") {
            return Err(BackendError::ConstraintViolated { raw: text });
        }
        let candidates = candidates.ok_or(BackendError::MissingLogprobs)?;
        let lp_yes = candidate_logprob(&candidates, "yes");
        let lp_no = candidate_logprob(&candidates, "no");
        if lp_yes == f64::NEG_INFINITY && lp_no == f64::NEG_INFINITY {
            return Err(BackendError::MissingLogprobs);
        }
        Ok(CompletionResponse::from_yes_no(lp_yes, lp_no))
    }
}
