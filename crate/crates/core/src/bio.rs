//! BIO tag decoding shared by the CoNLL reader and the model-output parser.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Tag {
    Outside,
    Begin(String),
    Inside(String),
}

impl FromStr for Tag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "O" {
            return Ok(Tag::Outside);
        }
        let bad = || Error::Bio(format!("unknown tag shape {s:?}"));
        let (prefix, label) = s.split_once('-').ok_or_else(bad)?;
        if label.trim().is_empty() {
            return Err(bad());
        }
        match prefix {
            "B" => Ok(Tag::Begin(label.to_string())),
            "I" => Ok(Tag::Inside(label.to_string())),
            _ => Err(bad()),
        }
    }
}

impl fmt::Display for Tag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tag::Outside => f.write_str("O"),
            Tag::Begin(t) => write!(f, "B-{t}"),
            Tag::Inside(t) => write!(f, "I-{t}"),
        }
    }
}

/// A decoded entity as a half-open range of token indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenRun {
    pub start: usize,
    pub end: usize,
    pub entity_type: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Decoded {
    pub runs: Vec<TokenRun>,
    pub warnings: Vec<String>,
}

/// Groups maximal `B-X (I-X)*` runs. An `I-X` that does not continue an
/// entity of type X opens a new entity and records a warning.
pub fn decode(tags: &[Tag]) -> Decoded {
    let mut out = Decoded::default();
    let mut open: Option<TokenRun> = None;
    for (i, tag) in tags.iter().enumerate() {
        match tag {
            Tag::Outside => {
                out.runs.extend(open.take());
            }
            Tag::Begin(t) => {
                out.runs.extend(open.take());
                open = Some(TokenRun {
                    start: i,
                    end: i + 1,
                    entity_type: t.clone(),
                });
            }
            Tag::Inside(t) => match &mut open {
                Some(run) if run.entity_type == *t => run.end = i + 1,
                _ => {
                    out.warnings
                        .push(format!("token {i}: I-{t} without a preceding B-{t}; treated as B-{t}"));
                    out.runs.extend(open.take());
                    open = Some(TokenRun {
                        start: i,
                        end: i + 1,
                        entity_type: t.clone(),
                    });
                }
            },
        }
    }
    out.runs.extend(open);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tags(s: &str) -> Vec<Tag> {
        s.split_whitespace().map(|t| t.parse().unwrap()).collect()
    }

    #[test]
    fn decodes_runs() {
        let d = decode(&tags("O B-drug I-drug O B-loc B-loc"));
        assert_eq!(d.runs.len(), 3);
        assert_eq!((d.runs[0].start, d.runs[0].end), (1, 3));
        assert_eq!((d.runs[2].start, d.runs[2].end), (5, 6));
        assert!(d.warnings.is_empty());
    }

    #[test]
    fn repairs_orphan_inside() {
        let d = decode(&tags("I-loc"));
        assert_eq!(d.runs[0].entity_type, "loc");
        assert_eq!(d.warnings.len(), 1);
        let d = decode(&tags("B-drug I-loc"));
        assert_eq!(d.runs.len(), 2);
        assert_eq!(d.warnings.len(), 1);
    }

    #[test]
    fn tag_shapes() {
        assert_eq!("B-medical procedure".parse::<Tag>().unwrap(), Tag::Begin("medical procedure".into()));
        assert!("X-drug".parse::<Tag>().is_err());
        assert!("B-".parse::<Tag>().is_err());
        assert!("drug".parse::<Tag>().is_err());
    }
}
