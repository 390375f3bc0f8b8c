//! Yes/No filtering of extracted mentions, with optional context and a
//! probability threshold.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::backend::{render_prompt, BackendDescriptor, BackendKind, Classifier, FilterQuery, TemplateId};
use crate::context::{context_for, ContextMode, ContextWindow};
use crate::error::{BackendError, Error, Result};
use crate::types::{Answer, Document, EntityTypeSpec, FilterVerdict, Mention};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PromptVariant {
    /// "Can '{entity}' be considered a/an {entity_type}?"
    #[default]
    Default,
    /// The question built from the type's description.
    Described,
}

impl fmt::Display for PromptVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PromptVariant::Default => "default",
            PromptVariant::Described => "described",
        })
    }
}

impl FromStr for PromptVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "default" => Ok(PromptVariant::Default),
            "described" => Ok(PromptVariant::Described),
            other => Err(Error::invalid(
                "filter prompt",
                format!("{other:?} (expected default or described)"),
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterConfig {
    #[serde(default)]
    pub context: ContextMode,
    #[serde(default)]
    pub prompt: PromptVariant,
    #[serde(default)]
    pub threshold: f64,
    pub backend: BackendDescriptor,
}

impl FilterConfig {
    pub fn new(backend: BackendDescriptor) -> Self {
        FilterConfig {
            context: ContextMode::None,
            prompt: PromptVariant::Default,
            threshold: 0.0,
            backend,
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_threshold(self.threshold)?;
        self.backend.decoding.validate()
    }

    /// Wrapper template for the filter prompt.
    pub fn wrapper(&self) -> TemplateId {
        match self.backend.template {
            Some(t) => t,
            None if self.backend.kind == BackendKind::Mock => TemplateId::Raw,
            None => TemplateId::Asclepius,
        }
    }
}

fn check_threshold(tau: f64) -> Result<()> {
    if (0.0..=1.0).contains(&tau) {
        Ok(())
    } else {
        Err(Error::invalid("threshold", format!("{tau} is outside [0, 1]")))
    }
}

/// The bare Yes/No question for one mention.
pub fn filter_question(entity: &str, t: &EntityTypeSpec, variant: PromptVariant) -> Result<String> {
    match variant {
        PromptVariant::Default => render_prompt(
            TemplateId::FilterDefault,
            &[("entity", entity), ("entity_type", &t.name)],
        ),
        PromptVariant::Described => {
            let description = t.description.as_deref().ok_or_else(|| {
                Error::invalid(
                    "filter prompt",
                    format!("entity type {:?} has no description for the described variant", t.name),
                )
            })?;
            render_prompt(
                TemplateId::FilterDescribed,
                &[("entity", entity), ("description", description)],
            )
        }
    }
}

/// Full filter prompt: the question wrapped in the filter model's template,
/// with any context in the template's document slot.
pub fn render_filter_prompt(
    entity: &str,
    t: &EntityTypeSpec,
    variant: PromptVariant,
    context: &ContextWindow,
    wrapper: TemplateId,
) -> Result<String> {
    let question = filter_question(entity, t, variant)?;
    let with_context = || {
        if context.text.is_empty() {
            question.clone()
        } else {
            format!("{}\n\n{}", context.text, question)
        }
    };
    match wrapper {
        TemplateId::Asclepius => render_prompt(
            TemplateId::Asclepius,
            &[("input", &context.text), ("instruction", &question)],
        ),
        TemplateId::Llama2 => render_prompt(TemplateId::Llama2, &[("instruction", &with_context())]),
        TemplateId::Raw => Ok(with_context()),
        other => Err(Error::invalid(
            "filter template",
            format!("{other} is not a filter wrapper (use asclepius, llama2 or raw)"),
        )),
    }
}

/// Rejected iff the answer is "No" with p(No) >= τ.
pub fn apply_threshold(answer: Answer, p_no: f64, tau: f64) -> Result<bool> {
    check_threshold(tau)?;
    Ok(!(answer == Answer::No && p_no >= tau))
}

/// Converts a Yes/No response into a verdict. p(No) is renormalized over
/// the two candidates.
pub fn verdict_from_response(
    resp: &crate::backend::CompletionResponse,
    tau: f64,
) -> Result<FilterVerdict> {
    let candidates = resp
        .first_token_candidates
        .as_ref()
        .ok_or(BackendError::MissingLogprobs)?;
    let lp = |k: &str| candidates.get(k).copied().unwrap_or(f64::NEG_INFINITY);
    let (lp_yes, lp_no) = (lp("Yes"), lp("No"));
    if lp_yes == f64::NEG_INFINITY && lp_no == f64::NEG_INFINITY {
        return Err(BackendError::MissingLogprobs.into());
    }
    let p_no = 1.0 / (1.0 + (lp_yes - lp_no).exp());
    let answer = if p_no >= 0.5 { Answer::No } else { Answer::Yes };
    let said = match resp.text.trim() {
        t if t.eq_ignore_ascii_case("yes") => Answer::Yes,
        t if t.eq_ignore_ascii_case("no") => Answer::No,
        _ => {
            return Err(BackendError::ConstraintViolated {
                raw: resp.text.clone(),
            }
            .into())
        }
    };
    if said != answer {
        log::debug!("response text {:?} disagrees with candidate argmax; using argmax", resp.text);
    }
    Ok(FilterVerdict {
        answer,
        p_no,
        accepted: apply_threshold(answer, p_no, tau)?,
    })
}

/// Classifies one mention.
pub fn classify(
    entity: &str,
    t: &EntityTypeSpec,
    context: &ContextWindow,
    cfg: &FilterConfig,
    classifier: &dyn Classifier,
) -> Result<FilterVerdict> {
    let prompt = render_filter_prompt(entity, t, cfg.prompt, context, cfg.wrapper())?;
    let query = FilterQuery {
        entity,
        entity_type: t,
        context,
        prompt: &prompt,
    };
    let resp = classifier.classify(&query)?;
    verdict_from_response(&resp, cfg.threshold)
}

/// Attaches a verdict to every mention and returns the accepted ones. Each
/// distinct (normalized surface, context) pair is classified once.
pub fn filter_set(
    mentions: &mut [Mention],
    t: &EntityTypeSpec,
    doc: &Document,
    cfg: &FilterConfig,
    classifier: &dyn Classifier,
) -> Result<Vec<Mention>> {
    let mut cache: HashMap<(String, String), FilterVerdict> = HashMap::new();
    for m in mentions.iter_mut() {
        let window = context_for(doc, m, cfg.context);
        let key = (m.normalized.clone(), window.text.clone());
        let verdict = match cache.get(&key) {
            Some(v) => *v,
            None => {
                let v = classify(&m.surface, t, &window, cfg, classifier)?;
                cache.insert(key, v);
                v
            }
        };
        m.verdict = Some(verdict);
    }
    Ok(mentions.iter().filter(|m| m.is_accepted()).cloned().collect())
}
