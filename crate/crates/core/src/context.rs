//! Segmentation, grounding of surfaces back into text, and the context
//! windows handed to the filter.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{normalize, Document, Mention, NormalizationConfig, Span};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ContextMode {
    #[default]
    None,
    Sentence,
    Paragraph,
    Document,
}

impl fmt::Display for ContextMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ContextMode::None => "none",
            ContextMode::Sentence => "sentence",
            ContextMode::Paragraph => "paragraph",
            ContextMode::Document => "document",
        })
    }
}

impl FromStr for ContextMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(ContextMode::None),
            "sentence" => Ok(ContextMode::Sentence),
            "paragraph" => Ok(ContextMode::Paragraph),
            "document" => Ok(ContextMode::Document),
            other => Err(Error::invalid(
                "context mode",
                format!("{other:?} (expected none, sentence, paragraph or document)"),
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContextWindow {
    pub mode: ContextMode,
    pub text: String,
    /// Set when sentence/paragraph context was requested but the mention
    /// could not be found in the document.
    pub ungrounded: bool,
}

impl ContextWindow {
    pub fn empty(mode: ContextMode) -> Self {
        ContextWindow {
            mode,
            text: String::new(),
            ungrounded: false,
        }
    }
}

/// Splits text into sentences and paragraphs.
///
/// Paragraphs are separated by blank lines. Sentences end at `.`, `?` or `!`
/// followed by whitespace, and at every newline. Both are trimmed of
/// surrounding whitespace, and every sentence lies inside one paragraph.
pub fn segment(text: &str) -> (Vec<Span>, Vec<Span>) {
    let chars: Vec<char> = text.chars().collect();
    let paragraphs = paragraphs(&chars);
    let mut sentences = Vec::new();
    for p in &paragraphs {
        let mut start: Option<usize> = None;
        let mut last = p.start;
        for i in p.start..p.end {
            let c = chars[i];
            if c == '\n' {
                if let Some(s) = start.take() {
                    sentences.push(Span::new(s, last + 1));
                }
                continue;
            }
            if c.is_whitespace() {
                continue;
            }
            let s = *start.get_or_insert(i);
            last = i;
            if matches!(c, '.' | '?' | '!') && (i + 1 == p.end || chars[i + 1].is_whitespace()) {
                sentences.push(Span::new(s, i + 1));
                start = None;
            }
        }
        if let Some(s) = start {
            sentences.push(Span::new(s, last + 1));
        }
    }
    (sentences, paragraphs)
}

fn paragraphs(chars: &[char]) -> Vec<Span> {
    let mut out = Vec::new();
    let mut current: Option<(usize, usize)> = None;
    let mut line_start = 0;
    while line_start < chars.len() {
        let line_end = chars[line_start..]
            .iter()
            .position(|&c| c == '\n')
            .map_or(chars.len(), |p| line_start + p);
        let line = &chars[line_start..line_end];
        match line.iter().position(|c| !c.is_whitespace()) {
            None => {
                if let Some((s, e)) = current.take() {
                    out.push(Span::new(s, e));
                }
            }
            Some(first) => {
                let last = line.iter().rposition(|c| !c.is_whitespace()).unwrap();
                let para = current.get_or_insert((line_start + first, 0));
                para.1 = line_start + last + 1;
            }
        }
        line_start = line_end + 1;
    }
    if let Some((s, e)) = current {
        out.push(Span::new(s, e));
    }
    out
}

/// Finds every occurrence of `surface` in the document under `cfg`
/// (case-insensitive and whitespace-tolerant with the default config).
///
/// Matches are leftmost, non-overlapping, and must not start or end
/// inside a word.
pub fn ground(doc: &Document, surface: &str, cfg: &NormalizationConfig) -> Vec<Span> {
    ground_text(doc.text(), surface, cfg)
}

pub(crate) fn ground_text(text: &str, surface: &str, cfg: &NormalizationConfig) -> Vec<Span> {
    let needle: Vec<char> = normalize(surface, cfg).chars().collect();
    if needle.is_empty() {
        return Vec::new();
    }
    let view = normalized_view(text, cfg);
    let m = needle.len();
    let mut spans = Vec::new();
    let mut k = 0;
    while k + m <= view.len() {
        if matches_at(&view, &needle, k) {
            let start = view[k].1;
            let end = view[k + m - 1].1 + 1;
            spans.push(Span::new(start, end));
            k += m;
        } else {
            k += 1;
        }
    }
    spans
}

fn normalized_view(text: &str, cfg: &NormalizationConfig) -> Vec<(char, usize)> {
    let mut view: Vec<(char, usize)> = Vec::with_capacity(text.len());
    for (i, c) in text.chars().enumerate() {
        if c.is_whitespace() && cfg.collapse_whitespace {
            if view.last().is_none_or(|(p, _)| *p != ' ') {
                view.push((' ', i));
            }
        } else if cfg.lowercase {
            view.extend(c.to_lowercase().map(|lc| (lc, i)));
        } else {
            view.push((c, i));
        }
    }
    view
}

fn matches_at(view: &[(char, usize)], needle: &[char], k: usize) -> bool {
    let m = needle.len();
    if !view[k..k + m].iter().map(|(c, _)| c).eq(needle.iter()) {
        return false;
    }
    // never begin or end inside a single source character's expansion
    if k > 0 && view[k - 1].1 == view[k].1 {
        return false;
    }
    if k + m < view.len() && view[k + m].1 == view[k + m - 1].1 {
        return false;
    }
    if needle[0].is_alphanumeric() && k > 0 && view[k - 1].0.is_alphanumeric() {
        return false;
    }
    if needle[m - 1].is_alphanumeric() && k + m < view.len() && view[k + m].0.is_alphanumeric() {
        return false;
    }
    true
}

/// Context passed to the filter for one mention.
pub fn context_for(doc: &Document, mention: &Mention, mode: ContextMode) -> ContextWindow {
    match mode {
        ContextMode::None => ContextWindow::empty(mode),
        ContextMode::Document => ContextWindow {
            mode,
            text: doc.text().to_string(),
            ungrounded: false,
        },
        ContextMode::Sentence | ContextMode::Paragraph => {
            let Some(first) = mention.spans.first() else {
                log::warn!(
                    "document {}: {:?} does not ground; filtering without context",
                    doc.id(),
                    mention.surface
                );
                return ContextWindow {
                    mode,
                    text: String::new(),
                    ungrounded: true,
                };
            };
            let units = if mode == ContextMode::Sentence {
                doc.sentences()
            } else {
                doc.paragraphs()
            };
            let window = enclosing(units, first).unwrap_or(*first);
            ContextWindow {
                mode,
                text: doc.slice(window).unwrap_or_default().to_string(),
                ungrounded: false,
            }
        }
    }
}

/// Smallest contiguous run of units covering `span`.
fn enclosing(units: &[Span], span: &Span) -> Option<Span> {
    if let Some(u) = units.iter().find(|u| u.contains(span)) {
        return Some(*u);
    }
    let mut hit = units.iter().filter(|u| u.overlaps(span));
    let first = hit.next()?;
    let last = hit.last().unwrap_or(first);
    Some(Span::new(first.start.min(span.start), last.end.max(span.end)))
}
