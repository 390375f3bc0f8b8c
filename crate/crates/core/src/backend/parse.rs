use std::sync::OnceLock;

use regex::Regex;

use crate::bio::{self, Tag};
use crate::error::{BackendError, Error, Result};

/// Parses an entity list from model output.
///
/// Accepts a bracketed array of quoted strings (JSON or single-quoted) and
/// falls back to a plain newline/comma separated list.
pub fn parse_entity_list(raw: &str) -> Result<Vec<String>, BackendError> {
    let trimmed = raw.trim();
    let unparseable = || BackendError::Unparseable {
        raw: raw.to_string(),
    };
    if trimmed.is_empty() {
        return Err(unparseable());
    }
    if let (Some(open), Some(close)) = (trimmed.find('['), trimmed.rfind(']')) {
        if open < close {
            let bracketed = &trimmed[open..=close];
            if let Ok(values) = serde_json::from_str::<Vec<serde_json::Value>>(bracketed) {
                return Ok(values
                    .into_iter()
                    .filter_map(|v| match v {
                        serde_json::Value::String(s) => Some(s.trim().to_string()),
                        serde_json::Value::Number(n) => Some(n.to_string()),
                        _ => None,
                    })
                    .filter(|s| !s.is_empty())
                    .collect());
            }
            return Ok(split_plain(&bracketed[1..bracketed.len() - 1]));
        }
    }
    let items = split_plain(trimmed);
    if items.is_empty() {
        return Err(unparseable());
    }
    Ok(items)
}

fn split_plain(s: &str) -> Vec<String> {
    s.split(['\n', ','])
        .map(|item| {
            strip_bullet(item.trim())
                .trim_matches(|c: char| c == '"' || c == '\'' || c.is_whitespace())
                .to_string()
        })
        .filter(|item| !item.is_empty())
        .collect()
}

/// Removes a leading list marker: `-`, `*`, `•`, `1.` or `1)`.
pub(crate) fn strip_bullet(item: &str) -> &str {
    for marker in ["- ", "* ", "• ", "-", "*", "•"] {
        if let Some(rest) = item.strip_prefix(marker) {
            return rest.trim_start();
        }
    }
    let digits = item.chars().take_while(char::is_ascii_digit).count();
    if digits > 0 {
        let rest = &item[digits..];
        if let Some(rest) = rest.strip_prefix('.').or_else(|| rest.strip_prefix(')')) {
            if rest.starts_with(char::is_whitespace) {
                return rest.trim_start();
            }
        }
    }
    item
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct BioParse {
    /// `(surface, type)` in text order.
    pub entities: Vec<(String, String)>,
    pub warnings: Vec<String>,
}

fn label_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\(\s*(O|[BI]-[^()]*?)\s*\)(?:\s*,\s*|\s+|\s*$)").unwrap())
}

/// Decodes `word_1(label_1), word_2(label_2), ...` output.
///
/// Entity words are joined with single spaces. An `I-X` that does not
/// continue an `X` entity starts a new one and is reported in `warnings`.
pub fn parse_bio(raw: &str) -> Result<BioParse> {
    let raw = raw.trim();
    let mut words = Vec::new();
    let mut tags = Vec::new();
    let mut prev = 0;
    for caps in label_re().captures_iter(raw) {
        let whole = caps.get(0).unwrap();
        let word = raw[prev..whole.start()].trim();
        if word.is_empty() {
            return Err(Error::Bio(format!("label without a word at byte {}", whole.start())));
        }
        if let Some(bad) = word.split_whitespace().nth(1).map(|_| word) {
            return Err(Error::Bio(format!("token missing its parenthesized label in {bad:?}")));
        }
        words.push(word);
        tags.push(caps[1].parse::<Tag>()?);
        prev = whole.end();
    }
    let trailing = raw[prev..].trim();
    if !trailing.is_empty() {
        return Err(Error::Bio(format!(
            "token missing its parenthesized label: {trailing:?}"
        )));
    }
    let decoded = bio::decode(&tags);
    for w in &decoded.warnings {
        log::warn!("BIO output repaired: {w}");
    }
    Ok(BioParse {
        entities: decoded
            .runs
            .into_iter()
            .map(|r| (words[r.start..r.end].join(" "), r.entity_type))
            .collect(),
        warnings: decoded.warnings,
    })
}

/// Inverse of [`parse_bio`] for whitespace-free tokens.
pub fn render_bio<S: AsRef<str>>(tokens: &[(S, Tag)]) -> String {
    tokens
        .iter()
        .map(|(w, t)| format!("{}({t})", w.as_ref()))
        .collect::<Vec<_>>()
        .join(", ")
}
