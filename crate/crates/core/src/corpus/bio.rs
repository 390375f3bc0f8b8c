//! CoNLL-style BIO files: one `token ... tag` per line, blank lines between
//! sentences, optional `-DOCSTART-` lines between documents.

use std::collections::BTreeMap;
use std::path::Path;

use super::Corpus;
use crate::bio::{decode, Tag};
use crate::error::{Error, Result};
use crate::types::{Document, EntityTypeSpec, GoldEntity, Polarity, Span};

#[derive(Debug, Clone, PartialEq)]
pub struct BioLoad {
    pub corpus: Corpus,
    pub warnings: Vec<String>,
}

type Sentence = Vec<(String, Tag)>;

pub fn load_bio(path: impl AsRef<Path>) -> Result<BioLoad> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let stem = path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("doc")
        .to_string();
    read_bio(&text, &stem).map_err(|e| match e {
        Error::Line { line, message, .. } => Error::Line {
            path: path.to_path_buf(),
            line,
            message,
        },
        other => other,
    })
}

/// Parses BIO text. Document text is the tokens joined by single spaces, one
/// sentence per line. Documents are named `{prefix}-{n}`.
pub fn read_bio(text: &str, prefix: &str) -> Result<BioLoad> {
    let has_docstart = text.lines().any(|l| l.trim_start().starts_with("-DOCSTART-"));
    let mut docs: Vec<Vec<Sentence>> = Vec::new();
    let mut doc: Vec<Sentence> = Vec::new();
    let mut sentence: Sentence = Vec::new();

    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.starts_with("-DOCSTART-") {
            if !sentence.is_empty() {
                doc.push(std::mem::take(&mut sentence));
            }
            if !doc.is_empty() {
                docs.push(std::mem::take(&mut doc));
            }
            continue;
        }
        if line.is_empty() {
            if !sentence.is_empty() {
                doc.push(std::mem::take(&mut sentence));
                if !has_docstart {
                    docs.push(std::mem::take(&mut doc));
                }
            }
            continue;
        }
        let cols: Vec<&str> = if line.contains('\t') {
            line.split('\t').map(str::trim).collect()
        } else {
            line.split_whitespace().collect()
        };
        let at = |message: String| Error::Line {
            path: Default::default(),
            line: n + 1,
            message,
        };
        if cols.len() < 2 {
            return Err(at(format!("expected `token tag`, found {line:?}")));
        }
        let tag: Tag = cols[cols.len() - 1].parse().map_err(|e: Error| at(e.to_string()))?;
        sentence.push((cols[0].to_string(), tag));
    }
    if !sentence.is_empty() {
        doc.push(sentence);
    }
    if !doc.is_empty() {
        docs.push(doc);
    }

    let mut warnings = Vec::new();
    let mut documents = Vec::new();
    let mut gold = BTreeMap::new();
    let mut types: Vec<EntityTypeSpec> = Vec::new();
    for (i, sentences) in docs.into_iter().enumerate() {
        let id = format!("{prefix}-{i}");
        let mut text = String::new();
        let mut chars = 0usize;
        let mut entities = Vec::new();
        for (k, sentence) in sentences.iter().enumerate() {
            if k > 0 {
                text.push('\n');
                chars += 1;
            }
            let mut offsets = Vec::with_capacity(sentence.len());
            for (j, (token, _)) in sentence.iter().enumerate() {
                if j > 0 {
                    text.push(' ');
                    chars += 1;
                }
                let start = chars;
                text.push_str(token);
                chars += token.chars().count();
                offsets.push(Span::new(start, chars));
            }
            let tags: Vec<Tag> = sentence.iter().map(|(_, t)| t.clone()).collect();
            let decoded = decode(&tags);
            warnings.extend(decoded.warnings.into_iter().map(|w| format!("{id}: {w}")));
            for run in decoded.runs {
                let span = Span::new(offsets[run.start].start, offsets[run.end - 1].end);
                let surface = sentence[run.start..run.end]
                    .iter()
                    .map(|(t, _)| t.as_str())
                    .collect::<Vec<_>>()
                    .join(" ");
                if !types.iter().any(|t| t.name.eq_ignore_ascii_case(&run.entity_type)) {
                    types.push(EntityTypeSpec::known(run.entity_type.clone())?);
                }
                entities.push(GoldEntity {
                    surface,
                    span,
                    entity_type: run.entity_type,
                    polarity: Polarity::Unspecified,
                });
            }
        }
        if !entities.is_empty() {
            gold.insert(id.clone(), entities);
        }
        documents.push(Document::new(id, text));
    }
    Ok(BioLoad {
        corpus: Corpus::new(documents, gold, types)?,
        warnings,
    })
}
