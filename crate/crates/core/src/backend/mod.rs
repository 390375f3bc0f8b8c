//! Clients for open-NER and filter model services, plus deterministic mocks.
//!
//! Three traits describe what the pipeline needs from a model:
//!
//! - [`CompletionBackend`]: raw single-prompt completion (the wire boundary).
//! - [`NerBackend`]: retrieve entity surfaces for one sub-type, or for a set
//!   of sub-types in one call.
//! - [`Classifier`]: answer a Yes/No question about one mention, reporting
//!   log-probabilities of both candidates.
//!
//! [`PromptedNer`] and [`PromptedClassifier`] adapt any completion backend
//! to the latter two by rendering the model's prompt template and parsing
//! its output. The mocks implement the traits directly.

mod http;
pub mod mock;
mod parse;
mod prompted;
mod template;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::context::ContextWindow;
use crate::error::{BackendError, Error, Result};
use crate::types::{EntityTypeSpec, SubTypeSet};

pub use http::{HttpBackend, HttpStats};
pub use parse::{parse_bio, parse_entity_list, render_bio, BioParse};
pub(crate) use parse::strip_bullet;
pub use prompted::{PromptedClassifier, PromptedNer};
pub use template::{render_prompt, TemplateId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Constraint {
    YesNo,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub prompt: String,
    pub max_new_tokens: u32,
    pub temperature: f64,
    pub top_p: f64,
    pub want_logprobs: bool,
    pub constraint: Option<Constraint>,
}

impl CompletionRequest {
    pub fn new(prompt: impl Into<String>, decoding: &Decoding) -> Self {
        CompletionRequest {
            prompt: prompt.into(),
            max_new_tokens: decoding.max_new_tokens,
            temperature: decoding.temperature,
            top_p: decoding.top_p,
            want_logprobs: false,
            constraint: None,
        }
    }

    /// Single-token Yes/No request with candidate log-probabilities.
    pub fn yes_no(prompt: impl Into<String>, decoding: &Decoding) -> Self {
        CompletionRequest {
            max_new_tokens: 1,
            want_logprobs: true,
            constraint: Some(Constraint::YesNo),
            ..Self::new(prompt, decoding)
        }
    }

    pub fn validate(&self) -> Result<()> {
        decoding_checks(self.max_new_tokens, self.temperature, self.top_p)
    }
}

fn decoding_checks(max_new_tokens: u32, temperature: f64, top_p: f64) -> Result<()> {
    if max_new_tokens < 1 {
        return Err(Error::invalid("completion request", "max_new_tokens must be >= 1"));
    }
    if !(temperature >= 0.0) {
        return Err(Error::invalid("completion request", "temperature must be >= 0"));
    }
    if !(top_p > 0.0 && top_p <= 1.0) {
        return Err(Error::invalid("completion request", "top_p must lie in (0, 1]"));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CompletionResponse {
    pub text: String,
    /// Log-probabilities of the first generated token's candidates.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub first_token_candidates: Option<BTreeMap<String, f64>>,
}

impl CompletionResponse {
    /// Builds the response of a Yes/No-constrained call from the two
    /// candidate log-probabilities. Ties go to "No".
    pub fn from_yes_no(lp_yes: f64, lp_no: f64) -> Self {
        let text = if lp_yes > lp_no { "Yes" } else { "No" };
        CompletionResponse {
            text: text.to_string(),
            first_token_candidates: Some(BTreeMap::from([
                ("Yes".to_string(), lp_yes),
                ("No".to_string(), lp_no),
            ])),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    /// One entity type per call.
    SingleType,
    /// A set of entity types per call.
    MultiType,
    /// Yes/No filter model.
    Classifier,
    Mock,
}

impl fmt::Display for BackendKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BackendKind::SingleType => "single_type",
            BackendKind::MultiType => "multi_type",
            BackendKind::Classifier => "classifier",
            BackendKind::Mock => "mock",
        })
    }
}

impl FromStr for BackendKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "single_type" => Ok(BackendKind::SingleType),
            "multi_type" => Ok(BackendKind::MultiType),
            "classifier" => Ok(BackendKind::Classifier),
            "mock" => Ok(BackendKind::Mock),
            other => Err(Error::invalid("backend kind", other.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Decoding {
    pub max_new_tokens: u32,
    pub temperature: f64,
    pub top_p: f64,
}

impl Decoding {
    /// Greedy decoding used for the NER models.
    pub const GREEDY: Decoding = Decoding {
        max_new_tokens: 256,
        temperature: 0.0,
        top_p: 1.0,
    };

    /// Sampling settings used for the filter models.
    pub const FILTER: Decoding = Decoding {
        max_new_tokens: 1,
        temperature: 0.2,
        top_p: 0.95,
    };

    pub fn validate(&self) -> Result<()> {
        decoding_checks(self.max_new_tokens, self.temperature, self.top_p)
    }
}

impl Default for Decoding {
    fn default() -> Self {
        Decoding::GREEDY
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_backoff_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_attempts: 4,
            base_backoff_ms: 500,
        }
    }
}

/// How to reach one model service.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendDescriptor {
    pub kind: BackendKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub template: Option<TemplateId>,
    #[serde(default)]
    pub decoding: Decoding,
    #[serde(default)]
    pub retry: RetryPolicy,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    /// The server enforces the Yes/No constraint itself.
    #[serde(default)]
    pub native_yes_no: bool,
    /// Settings of a [`BackendKind::Mock`] service.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mock: Option<MockSpec>,
}

/// Decision rule of a mock filter service.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MockPolicy {
    #[default]
    Oracle,
    Polarity,
    Stochastic,
    InformedStochastic,
    Fixed,
}

/// Configuration of the mock NER and filter services.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MockSpec {
    /// Gazetteer JSON file; the bundled clinical gazetteer when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gazetteer: Option<std::path::PathBuf>,
    pub contamination_rate: f64,
    pub seed: u64,
    /// Answer all sub-types of a set in one call.
    pub multi: bool,
    pub policy: MockPolicy,
    pub lp_yes: f64,
    pub lp_no: f64,
}

impl Default for MockSpec {
    fn default() -> Self {
        MockSpec {
            gazetteer: None,
            contamination_rate: 0.0,
            seed: 0,
            multi: false,
            policy: MockPolicy::Oracle,
            lp_yes: -0.1,
            lp_no: -2.4,
        }
    }
}

fn default_timeout_ms() -> u64 {
    60_000
}

impl BackendDescriptor {
    pub fn new(kind: BackendKind) -> Self {
        BackendDescriptor {
            kind,
            endpoint: None,
            model: None,
            template: None,
            decoding: if kind == BackendKind::Classifier {
                Decoding::FILTER
            } else {
                Decoding::GREEDY
            },
            retry: RetryPolicy::default(),
            timeout_ms: default_timeout_ms(),
            native_yes_no: false,
            mock: None,
        }
    }

    pub fn with_endpoint(mut self, endpoint: impl Into<String>) -> Self {
        self.endpoint = Some(endpoint.into());
        self
    }

    pub fn with_template(mut self, template: TemplateId) -> Self {
        self.template = Some(template);
        self
    }

    /// Template used when none is configured.
    pub fn template_or_default(&self) -> TemplateId {
        self.template.unwrap_or(match self.kind {
            BackendKind::MultiType => TemplateId::Gner,
            BackendKind::Classifier => TemplateId::Asclepius,
            _ => TemplateId::Uniner,
        })
    }
}

/// Raw completion.
pub trait CompletionBackend: Send + Sync {
    fn complete(&self, req: &CompletionRequest) -> Result<CompletionResponse, BackendError>;
}

/// How many entity types a NER backend accepts per call.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Arity {
    Single,
    Multi,
}

/// Open-vocabulary entity retrieval over a piece of text.
pub trait NerBackend: Send + Sync {
    fn arity(&self) -> Arity;

    /// Surfaces of one entity type, in the order the model produced them.
    fn extract_single(&self, text: &str, subtype: &str) -> Result<Vec<String>>;

    /// Surfaces for every requested type from a single call. Labels outside
    /// `subtypes` are dropped.
    fn extract_multi(&self, text: &str, subtypes: &SubTypeSet) -> Result<Vec<(String, Vec<String>)>>;
}

/// Everything a Yes/No classifier may look at for one mention.
#[derive(Debug, Clone)]
pub struct FilterQuery<'a> {
    pub entity: &'a str,
    pub entity_type: &'a EntityTypeSpec,
    pub context: &'a ContextWindow,
    /// Fully rendered prompt.
    pub prompt: &'a str,
}

pub trait Classifier: Send + Sync {
    /// Must return both candidate log-probabilities in
    /// `first_token_candidates` under the keys "Yes" and "No".
    fn classify(&self, query: &FilterQuery<'_>) -> Result<CompletionResponse, BackendError>;
}

impl<T: CompletionBackend + ?Sized> CompletionBackend for std::sync::Arc<T> {
    fn complete(&self, req: &CompletionRequest) -> Result<CompletionResponse, BackendError> {
        (**self).complete(req)
    }
}

impl<T: NerBackend + ?Sized> NerBackend for std::sync::Arc<T> {
    fn arity(&self) -> Arity {
        (**self).arity()
    }

    fn extract_single(&self, text: &str, subtype: &str) -> Result<Vec<String>> {
        (**self).extract_single(text, subtype)
    }

    fn extract_multi(&self, text: &str, subtypes: &SubTypeSet) -> Result<Vec<(String, Vec<String>)>> {
        (**self).extract_multi(text, subtypes)
    }
}

impl<T: Classifier + ?Sized> Classifier for std::sync::Arc<T> {
    fn classify(&self, query: &FilterQuery<'_>) -> Result<CompletionResponse, BackendError> {
        (**self).classify(query)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn request_invariants() {
        let mut r = CompletionRequest::new("p", &Decoding::GREEDY);
        assert!(r.validate().is_ok());
        r.top_p = 0.0;
        assert!(r.validate().is_err());
        r.top_p = 1.0;
        r.temperature = -0.1;
        assert!(r.validate().is_err());
        r.temperature = 0.0;
        r.max_new_tokens = 0;
        assert!(r.validate().is_err());
    }

    #[test]
    fn yes_no_argmax() {
        let r = CompletionResponse::from_yes_no(-0.1, -2.4);
        assert_eq!(r.text, "Yes");
        let c = r.first_token_candidates.unwrap();
        assert_eq!(c["Yes"], -0.1);
        assert_eq!(c["No"], -2.4);
        assert_eq!(CompletionResponse::from_yes_no(-0.7, -0.7).text, "No");
    }

    #[test]
    fn filter_defaults_follow_published_hyperparameters() {
        let d = BackendDescriptor::new(BackendKind::Classifier);
        assert_eq!(d.decoding.temperature, 0.2);
        assert_eq!(d.decoding.top_p, 0.95);
        assert_eq!(BackendDescriptor::new(BackendKind::SingleType).decoding.temperature, 0.0);
    }
}
