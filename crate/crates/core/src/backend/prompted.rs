use std::sync::Arc;

use super::{
    parse_bio, parse_entity_list, render_prompt, Arity, BackendDescriptor, BackendKind, Classifier,
    CompletionBackend, CompletionRequest, CompletionResponse, FilterQuery, NerBackend, TemplateId,
};
use crate::error::{BackendError, Result};
use crate::types::SubTypeSet;

/// NER over a completion backend, using the model's own prompt template.
pub struct PromptedNer {
    backend: Arc<dyn CompletionBackend>,
    desc: BackendDescriptor,
}

impl PromptedNer {
    pub fn new(backend: Arc<dyn CompletionBackend>, desc: BackendDescriptor) -> Self {
        PromptedNer { backend, desc }
    }

    fn call(&self, prompt: String) -> Result<String> {
        let req = CompletionRequest::new(prompt, &self.desc.decoding);
        req.validate()?;
        Ok(self.backend.complete(&req)?.text)
    }

    fn bio_call(&self, text: &str, labels: &str) -> Result<Vec<(String, String)>> {
        let instruction = render_prompt(TemplateId::GnerInstruction, &[("labels", labels)])?;
        let prompt = render_prompt(
            TemplateId::Gner,
            &[("instruction", &instruction), ("input", text)],
        )?;
        let raw = self.call(prompt)?;
        Ok(parse_bio(&raw)?.entities)
    }
}

impl NerBackend for PromptedNer {
    fn arity(&self) -> Arity {
        if self.desc.kind == BackendKind::MultiType {
            Arity::Multi
        } else {
            Arity::Single
        }
    }

    fn extract_single(&self, text: &str, subtype: &str) -> Result<Vec<String>> {
        match self.desc.template_or_default() {
            TemplateId::Gner => Ok(self
                .bio_call(text, subtype)?
                .into_iter()
                .filter(|(_, label)| label.eq_ignore_ascii_case(subtype))
                .map(|(surface, _)| surface)
                .collect()),
            template => {
                let instruction =
                    render_prompt(TemplateId::UninerInstruction, &[("entity_type", subtype)])?;
                let prompt = render_prompt(template, &[("input", text), ("instruction", &instruction)])?;
                let raw = self.call(prompt)?;
                Ok(parse_entity_list(&raw)?)
            }
        }
    }

    fn extract_multi(&self, text: &str, subtypes: &SubTypeSet) -> Result<Vec<(String, Vec<String>)>> {
        if self.arity() != Arity::Multi {
            return Err(BackendError::Unsupported {
                kind: self.desc.kind.to_string(),
                operation: "multi-type extraction",
            }
            .into());
        }
        let labels = subtypes.subtypes().join(", ");
        let mut out: Vec<(String, Vec<String>)> =
            subtypes.iter().map(|s| (s.to_string(), Vec::new())).collect();
        for (surface, label) in self.bio_call(text, &labels)? {
            match out.iter_mut().find(|(s, _)| s.eq_ignore_ascii_case(&label)) {
                Some((_, surfaces)) => surfaces.push(surface),
                None => log::warn!("dropping {surface:?}: label {label:?} was not requested"),
            }
        }
        Ok(out)
    }
}

/// Yes/No classifier over a completion backend. The prompt in the query is
/// sent as is.
pub struct PromptedClassifier {
    backend: Arc<dyn CompletionBackend>,
    desc: BackendDescriptor,
}

impl PromptedClassifier {
    pub fn new(backend: Arc<dyn CompletionBackend>, desc: BackendDescriptor) -> Self {
        PromptedClassifier { backend, desc }
    }
}

impl Classifier for PromptedClassifier {
    fn classify(&self, query: &FilterQuery<'_>) -> Result<CompletionResponse, BackendError> {
        let req = CompletionRequest::yes_no(query.prompt, &self.desc.decoding);
        self.backend.complete(&req)
    }
}
