//! Zero-shot clinical entity extraction by decomposing a target type into
//! sub-types, retrieving each with an open NER model, and filtering the
//! union with a Yes/No classifier.
//!
//! The usual entry point is [`Pipeline`]: build a [`RunConfig`], pick
//! [`Backends`], and call [`Pipeline::run_corpus`]. Scoring and the
//! analyses live in [`eval`].

pub mod backend;
pub mod bio;
pub mod config;
pub mod context;
pub mod corpus;
pub mod decomposer;
pub mod error;
pub mod eval;
pub mod filter;
mod hash;
pub mod pipeline;
pub mod types;

pub use backend::{
    Arity, BackendDescriptor, BackendKind, Classifier, CompletionBackend, CompletionRequest, CompletionResponse,
    Decoding, MockPolicy, MockSpec, NerBackend, TemplateId,
};
pub use config::{InputUnit, RunConfig, RunMode};
pub use context::{ContextMode, ContextWindow};
pub use corpus::{load_run, persist_run, Corpus, Gazetteer, RunArtifacts};
pub use decomposer::DecomposerRegistry;
pub use error::{BackendError, Error, Result};
pub use eval::{exact_match, Counts, EvalReport, Scores};
pub use filter::{FilterConfig, PromptVariant};
pub use pipeline::{Backends, DocPrediction, Pipeline, UnitStatus};
pub use types::{
    normalize, Answer, Document, EntityTypeSpec, FilterVerdict, GoldEntity, Mention, NormalizationConfig, Polarity,
    Span, SubTypeSet, SubTypeSource,
};
