//! Domain types shared across the pipeline.
//!
//! All offsets are character offsets counted over Unicode scalar values,
//! never byte offsets.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::context;
use crate::error::{Error, Result};

/// Half-open character range `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(start: usize, end: usize) -> Self {
        debug_assert!(start <= end);
        Span { start, end }
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.start == self.end
    }

    pub fn contains(&self, other: &Span) -> bool {
        self.start <= other.start && other.end <= self.end
    }

    pub fn overlaps(&self, other: &Span) -> bool {
        self.start < other.end && other.start < self.end
    }
}

/// A clinical narrative with its sentence and paragraph segmentation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Document {
    id: String,
    text: String,
    // byte offset of every char boundary, len = char count + 1
    boundaries: Vec<usize>,
    sentences: Vec<Span>,
    paragraphs: Vec<Span>,
}

impl Document {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Self {
        let text = text.into();
        let mut boundaries: Vec<usize> = text.char_indices().map(|(b, _)| b).collect();
        boundaries.push(text.len());
        let (sentences, paragraphs) = context::segment(&text);
        Document {
            id: id.into(),
            text,
            boundaries,
            sentences,
            paragraphs,
        }
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    /// Length in characters.
    pub fn char_len(&self) -> usize {
        self.boundaries.len() - 1
    }

    pub fn sentences(&self) -> &[Span] {
        &self.sentences
    }

    pub fn paragraphs(&self) -> &[Span] {
        &self.paragraphs
    }

    /// Text covered by a character span. Out-of-range spans yield `None`.
    pub fn slice(&self, span: Span) -> Option<&str> {
        if span.start > span.end || span.end > self.char_len() {
            return None;
        }
        Some(&self.text[self.boundaries[span.start]..self.boundaries[span.end]])
    }

    pub fn sentence_texts(&self) -> impl Iterator<Item = &str> {
        self.sentences.iter().filter_map(|s| self.slice(*s))
    }
}

/// The entity type a user asks for, e.g. "treatment".
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityTypeSpec {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    #[serde(default)]
    pub requires_context: bool,
}

/// Descriptions used by the described filter prompt.
const KNOWN_DESCRIPTIONS: &[(&str, &str)] = &[
    (
        "treatment",
        "a procedure or substance given to a patient to resolve a medical problem",
    ),
    (
        "problem",
        "an observation thought to be abnormal or caused by a disease",
    ),
    (
        "test",
        "a procedure or measure to find more information about a medical problem",
    ),
    (
        "clinical department",
        "a clinical unit or clinical service name",
    ),
];

/// Types whose mentions cannot be judged without surrounding text.
const CONTEXT_DEPENDENT: &[&str] = &["adverse drug", "adverse drug event"];

impl EntityTypeSpec {
    pub fn new(name: impl Into<String>) -> Result<Self> {
        let name = name.into();
        if name.trim().is_empty() {
            return Err(Error::invalid("entity type", "name is empty"));
        }
        Ok(EntityTypeSpec {
            name,
            description: None,
            requires_context: false,
        })
    }

    /// Builds a spec, filling in the curated description and context flag
    /// for the clinical types the crate knows about.
    pub fn known(name: impl Into<String>) -> Result<Self> {
        let mut spec = Self::new(name)?;
        let key = spec.name.trim().to_lowercase();
        spec.description = KNOWN_DESCRIPTIONS
            .iter()
            .find(|(n, _)| *n == key)
            .map(|(_, d)| d.to_string());
        spec.requires_context = CONTEXT_DEPENDENT.contains(&key.as_str());
        Ok(spec)
    }

    pub fn with_description(mut self, description: impl Into<String>) -> Self {
        self.description = Some(description.into());
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SubTypeSource {
    Annotation,
    LlmGenerated,
    Umls,
    Custom,
}

impl fmt::Display for SubTypeSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SubTypeSource::Annotation => "annotation",
            SubTypeSource::LlmGenerated => "llm-generated",
            SubTypeSource::Umls => "umls",
            SubTypeSource::Custom => "custom",
        })
    }
}

impl FromStr for SubTypeSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_lowercase().as_str() {
            "annotation" => Ok(SubTypeSource::Annotation),
            "llm-generated" | "llm" | "chatgpt" => Ok(SubTypeSource::LlmGenerated),
            "umls" => Ok(SubTypeSource::Umls),
            "custom" => Ok(SubTypeSource::Custom),
            other => Err(Error::invalid(
                "decomposer source",
                format!("{other:?} (expected annotation, llm-generated, umls or custom)"),
            )),
        }
    }
}

/// Ordered, duplicate-free list of sub-types for one target type.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawSubTypeSet")]
pub struct SubTypeSet {
    target: String,
    source: SubTypeSource,
    subtypes: Vec<String>,
}

#[derive(Deserialize)]
struct RawSubTypeSet {
    target: String,
    source: SubTypeSource,
    subtypes: Vec<String>,
}

impl TryFrom<RawSubTypeSet> for SubTypeSet {
    type Error = Error;

    fn try_from(raw: RawSubTypeSet) -> Result<Self> {
        SubTypeSet::new(raw.target, raw.source, raw.subtypes)
    }
}

impl SubTypeSet {
    pub fn new(
        target: impl Into<String>,
        source: SubTypeSource,
        subtypes: Vec<String>,
    ) -> Result<Self> {
        if subtypes.is_empty() {
            return Err(Error::invalid("sub-type set", "no sub-types"));
        }
        let mut seen = BTreeSet::new();
        for s in &subtypes {
            if s.trim().is_empty() {
                return Err(Error::invalid("sub-type set", "empty sub-type"));
            }
            if !seen.insert(s.to_lowercase()) {
                return Err(Error::invalid(
                    "sub-type set",
                    format!("duplicate sub-type {s:?}"),
                ));
            }
        }
        Ok(SubTypeSet {
            target: target.into(),
            source,
            subtypes,
        })
    }

    pub fn target(&self) -> &str {
        &self.target
    }

    pub fn source(&self) -> SubTypeSource {
        self.source
    }

    pub fn subtypes(&self) -> &[String] {
        &self.subtypes
    }

    pub fn len(&self) -> usize {
        self.subtypes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subtypes.is_empty()
    }

    pub fn contains(&self, subtype: &str) -> bool {
        let key = subtype.to_lowercase();
        self.subtypes.iter().any(|s| s.to_lowercase() == key)
    }

    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.subtypes.iter().map(String::as_str)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Answer {
    Yes,
    No,
}

impl fmt::Display for Answer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Answer::Yes => "yes",
            Answer::No => "no",
        })
    }
}

/// Outcome of classifying one mention.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterVerdict {
    pub answer: Answer,
    /// Probability of "No" renormalized over the two candidates.
    pub p_no: f64,
    pub accepted: bool,
}

/// A predicted entity surface grounded in a document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mention {
    pub surface: String,
    pub normalized: String,
    pub origins: BTreeSet<String>,
    pub spans: Vec<Span>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verdict: Option<FilterVerdict>,
}

impl Mention {
    pub fn new(surface: impl Into<String>, cfg: &NormalizationConfig) -> Result<Self> {
        let surface = surface.into();
        let normalized = normalize(&surface, cfg);
        if normalized.is_empty() {
            return Err(Error::invalid(
                "mention",
                format!("surface {surface:?} is empty after normalization"),
            ));
        }
        Ok(Mention {
            surface,
            normalized,
            origins: BTreeSet::new(),
            spans: Vec::new(),
            verdict: None,
        })
    }

    pub fn with_origin(mut self, origin: impl Into<String>) -> Self {
        self.origins.insert(origin.into());
        self
    }

    /// True when no verdict is attached or the verdict accepts it.
    pub fn is_accepted(&self) -> bool {
        self.verdict.is_none_or(|v| v.accepted)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Polarity {
    Positive,
    Negative,
    #[default]
    Unspecified,
}

impl FromStr for Polarity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "positive" => Ok(Polarity::Positive),
            "negative" => Ok(Polarity::Negative),
            "unspecified" => Ok(Polarity::Unspecified),
            other => Err(Error::UnknownPolarity(other.to_string())),
        }
    }
}

/// An annotated entity.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoldEntity {
    pub surface: String,
    pub span: Span,
    #[serde(rename = "type")]
    pub entity_type: String,
    #[serde(default)]
    pub polarity: Polarity,
}

/// Controls how surfaces are compared.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(default)]
pub struct NormalizationConfig {
    pub lowercase: bool,
    pub collapse_whitespace: bool,
    pub strip_edge_punctuation: bool,
}

impl Default for NormalizationConfig {
    fn default() -> Self {
        NormalizationConfig {
            lowercase: true,
            collapse_whitespace: true,
            strip_edge_punctuation: false,
        }
    }
}

fn is_edge_trimmable(c: char, strip_punctuation: bool) -> bool {
    c.is_whitespace() || (strip_punctuation && (c.is_ascii_punctuation() || is_unicode_punct(c)))
}

fn is_unicode_punct(c: char) -> bool {
    matches!(
        c,
        '\u{2010}'..='\u{2027}' | '\u{2030}'..='\u{205E}' | '\u{00A1}' | '\u{00AB}' | '\u{00BB}' | '\u{00BF}'
    )
}

/// Normalizes a surface for comparison. Edges are always trimmed.
pub fn normalize(s: &str, cfg: &NormalizationConfig) -> String {
    let lowered;
    let s = if cfg.lowercase {
        lowered = s.to_lowercase();
        lowered.as_str()
    } else {
        s
    };
    let trimmed = s.trim_matches(|c| is_edge_trimmable(c, cfg.strip_edge_punctuation));
    if cfg.collapse_whitespace {
        let mut out = String::with_capacity(trimmed.len());
        for (i, word) in trimmed.split_whitespace().enumerate() {
            if i > 0 {
                out.push(' ');
            }
            out.push_str(word);
        }
        out
    } else {
        trimmed.to_string()
    }
}
