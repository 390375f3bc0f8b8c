use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Prompt templates shipped under `assets/templates/`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateId {
    Uniner,
    UninerInstruction,
    Gner,
    GnerInstruction,
    Asclepius,
    Llama2,
    FilterDefault,
    FilterDescribed,
    Decompose,
    /// The instruction alone, unwrapped.
    Raw,
}

impl TemplateId {
    pub const ALL: [TemplateId; 10] = [
        TemplateId::Uniner,
        TemplateId::UninerInstruction,
        TemplateId::Gner,
        TemplateId::GnerInstruction,
        TemplateId::Asclepius,
        TemplateId::Llama2,
        TemplateId::FilterDefault,
        TemplateId::FilterDescribed,
        TemplateId::Decompose,
        TemplateId::Raw,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TemplateId::Uniner => "uniner",
            TemplateId::UninerInstruction => "uniner_instruction",
            TemplateId::Gner => "gner",
            TemplateId::GnerInstruction => "gner_instruction",
            TemplateId::Asclepius => "asclepius",
            TemplateId::Llama2 => "llama2",
            TemplateId::FilterDefault => "filter_default",
            TemplateId::FilterDescribed => "filter_described",
            TemplateId::Decompose => "decompose",
            TemplateId::Raw => "raw",
        }
    }

    pub fn source(self) -> &'static str {
        match self {
            TemplateId::Uniner => include_str!("../../assets/templates/uniner.txt"),
            TemplateId::UninerInstruction => {
                include_str!("../../assets/templates/uniner_instruction.txt")
            }
            TemplateId::Gner => include_str!("../../assets/templates/gner.txt"),
            TemplateId::GnerInstruction => include_str!("../../assets/templates/gner_instruction.txt"),
            TemplateId::Asclepius => include_str!("../../assets/templates/asclepius.txt"),
            TemplateId::Llama2 => include_str!("../../assets/templates/llama2.txt"),
            TemplateId::FilterDefault => include_str!("../../assets/templates/filter_default.txt"),
            TemplateId::FilterDescribed => include_str!("../../assets/templates/filter_described.txt"),
            TemplateId::Decompose => include_str!("../../assets/templates/decompose.txt"),
            TemplateId::Raw => "{instruction}",
        }
    }

    /// Slot names in order of first appearance.
    pub fn slots(self) -> Vec<&'static str> {
        let mut names = Vec::new();
        for piece in pieces(self.source()) {
            if let Piece::Slot(name) = piece {
                if !names.contains(&name) {
                    names.push(name);
                }
            }
        }
        names
    }
}

impl fmt::Display for TemplateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TemplateId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        TemplateId::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| Error::UnknownTemplate(s.to_string()))
    }
}

enum Piece<'a> {
    Text(&'a str),
    Slot(&'a str),
}

fn pieces(src: &str) -> Vec<Piece<'_>> {
    let mut out = Vec::new();
    let mut rest = src;
    while let Some(open) = rest.find('{') {
        let after = &rest[open + 1..];
        let ident_len = after
            .find(|c: char| !(c.is_ascii_lowercase() || c == '_'))
            .unwrap_or(after.len());
        if ident_len > 0 && after[ident_len..].starts_with('}') {
            if open > 0 {
                out.push(Piece::Text(&rest[..open]));
            }
            out.push(Piece::Slot(&after[..ident_len]));
            rest = &after[ident_len + 1..];
        } else {
            out.push(Piece::Text(&rest[..=open]));
            rest = after;
        }
    }
    if !rest.is_empty() {
        out.push(Piece::Text(rest));
    }
    out
}

/// Substitutes `{slot}` placeholders in one pass; substituted values are
/// never rescanned.
pub fn render_prompt(template: TemplateId, slots: &[(&str, &str)]) -> Result<String> {
    let src = template.source();
    let mut out = String::with_capacity(src.len() + slots.iter().map(|(_, v)| v.len()).sum::<usize>());
    for piece in pieces(src) {
        match piece {
            Piece::Text(t) => out.push_str(t),
            Piece::Slot(name) => {
                let value = slots
                    .iter()
                    .find(|(k, _)| *k == name)
                    .map(|(_, v)| *v)
                    .ok_or_else(|| Error::MissingSlot {
                        template: template.name().to_string(),
                        slot: name.to_string(),
                    })?;
                out.push_str(value);
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniner_prompt_shape() {
        let p = render_prompt(
            TemplateId::Uniner,
            &[("input", "He took aspirin."), ("instruction", "What describes medication in the text?")],
        )
        .unwrap();
        assert!(p.starts_with(
            "A virtual assistant answers questions from a user based on the provided text."
        ));
        assert!(p.contains("USER: Text: He took aspirin.\n"));
        assert!(p.ends_with("ASSISTANT:"));
    }

    #[test]
    fn slot_listing() {
        assert_eq!(TemplateId::Gner.slots(), vec!["instruction", "input"]);
        assert_eq!(TemplateId::Decompose.slots(), vec!["entity_type"]);
        assert_eq!(TemplateId::Llama2.slots(), vec!["instruction"]);
    }

    #[test]
    fn values_are_not_rescanned() {
        let p = render_prompt(TemplateId::Raw, &[("instruction", "{input} stays")]).unwrap();
        assert_eq!(p, "{input} stays");
    }

    #[test]
    fn missing_slot_and_unknown_id() {
        let err = render_prompt(TemplateId::Uniner, &[("input", "x")]).unwrap_err();
        assert!(matches!(err, Error::MissingSlot { ref slot, .. } if slot == "instruction"));
        assert!("mistral".parse::<TemplateId>().is_err());
        assert_eq!("llama2".parse::<TemplateId>().unwrap(), TemplateId::Llama2);
    }
}
