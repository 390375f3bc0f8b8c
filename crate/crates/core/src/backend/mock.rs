//! Deterministic stand-ins for model services.
//!
//! Every mock counts its calls so tests can assert that re-scoring and
//! resumed runs never query a backend twice.

use std::collections::HashSet;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use super::{Arity, Classifier, CompletionBackend, CompletionRequest, CompletionResponse, FilterQuery, NerBackend};
use crate::context::ground_text;
use crate::corpus::{Corpus, Gazetteer, NEGATION_CUES};
use crate::error::{BackendError, Result};
use crate::hash::unit_interval;
use crate::types::{normalize, NormalizationConfig, SubTypeSet};

/// Returns configured responses in order, repeating the last one.
pub struct CannedCompletion {
    responses: Vec<CompletionResponse>,
    calls: AtomicUsize,
    prompts: Mutex<Vec<String>>,
}

impl CannedCompletion {
    pub fn new(text: impl Into<String>) -> Self {
        Self::sequence(vec![CompletionResponse {
            text: text.into(),
            first_token_candidates: None,
        }])
    }

    pub fn yes_no(lp_yes: f64, lp_no: f64) -> Self {
        Self::sequence(vec![CompletionResponse::from_yes_no(lp_yes, lp_no)])
    }

    pub fn sequence(responses: Vec<CompletionResponse>) -> Self {
        assert!(!responses.is_empty(), "canned backend needs a response");
        CannedCompletion {
            responses,
            calls: AtomicUsize::new(0),
            prompts: Mutex::new(Vec::new()),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    /// Prompts received so far.
    pub fn prompts(&self) -> Vec<String> {
        self.prompts.lock().unwrap().clone()
    }
}

impl CompletionBackend for CannedCompletion {
    fn complete(&self, req: &CompletionRequest) -> Result<CompletionResponse, BackendError> {
        let n = self.calls.fetch_add(1, Ordering::SeqCst);
        self.prompts.lock().unwrap().push(req.prompt.clone());
        Ok(self.responses[n.min(self.responses.len() - 1)].clone())
    }
}

/// NER mock answering from a gazetteer.
///
/// For a sub-type it returns every gazetteer surface of that sub-type found
/// in the text (as written in the text, ordered by first occurrence). Off-type
/// surfaces listed under the sub-type's contamination are returned with
/// probability `contamination_rate`, decided by a stable hash of
/// (seed, sub-type, surface, text).
pub struct GazetteerNer {
    gazetteer: Arc<Gazetteer>,
    contamination_rate: f64,
    seed: u64,
    arity: Arity,
    norm: NormalizationConfig,
    calls: AtomicUsize,
}

impl GazetteerNer {
    pub fn new(gazetteer: Arc<Gazetteer>) -> Self {
        GazetteerNer {
            gazetteer,
            contamination_rate: 0.0,
            seed: 0,
            arity: Arity::Single,
            norm: NormalizationConfig::default(),
            calls: AtomicUsize::new(0),
        }
    }

    pub fn with_contamination(mut self, rate: f64, seed: u64) -> Self {
        self.contamination_rate = rate.clamp(0.0, 1.0);
        self.seed = seed;
        self
    }

    pub fn with_arity(mut self, arity: Arity) -> Self {
        self.arity = arity;
        self
    }

    pub fn with_normalization(mut self, norm: NormalizationConfig) -> Self {
        self.norm = norm;
        self
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    fn lookup(&self, text: &str, subtype: &str) -> Vec<String> {
        let mut found: Vec<(usize, String)> = Vec::new();
        let mut seen = HashSet::new();
        let chars: Vec<char> = text.chars().collect();
        let mut take = |surface: &str, found: &mut Vec<(usize, String)>| {
            if let Some(span) = ground_text(text, surface, &self.norm).first() {
                let written: String = chars[span.start..span.end].iter().collect();
                if seen.insert(normalize(&written, &self.norm)) {
                    found.push((span.start, written));
                }
            }
        };
        for surface in self.gazetteer.surfaces(subtype) {
            take(surface, &mut found);
        }
        if self.contamination_rate > 0.0 {
            for surface in self.gazetteer.contamination(subtype) {
                let u = unit_interval(self.seed, &["contaminate", subtype, surface, text]);
                if u < self.contamination_rate {
                    take(surface, &mut found);
                }
            }
        }
        found.sort_by_key(|(pos, _)| *pos);
        found.into_iter().map(|(_, s)| s).collect()
    }
}

impl NerBackend for GazetteerNer {
    fn arity(&self) -> Arity {
        self.arity
    }

    fn extract_single(&self, text: &str, subtype: &str) -> Result<Vec<String>> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        Ok(self.lookup(text, subtype))
    }

    fn extract_multi(&self, text: &str, subtypes: &SubTypeSet) -> Result<Vec<(String, Vec<String>)>> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        Ok(subtypes
            .iter()
            .map(|s| (s.to_string(), self.lookup(text, s)))
            .collect())
    }
}

/// Decision rule of a [`MockClassifier`].
#[derive(Debug, Clone)]
pub enum ClassifierPolicy {
    /// Same log-probabilities for every query.
    Fixed { lp_yes: f64, lp_no: f64 },
    /// "Yes" iff the entity is a gold entity of the queried type.
    Oracle { gold: HashSet<(String, String)> },
    /// "No" iff the context window contains a negation cue.
    Polarity { cues: Vec<String> },
    /// Seeded pseudo-random p(No). With gold knowledge the draw is skewed
    /// toward the right answer without ever being certain.
    Stochastic {
        seed: u64,
        gold: Option<HashSet<(String, String)>>,
    },
}

/// p(No) used by the decisive policies.
const CONFIDENT_NO: f64 = 0.99;

impl ClassifierPolicy {
    pub fn oracle(corpus: &Corpus, norm: &NormalizationConfig) -> Self {
        ClassifierPolicy::Oracle {
            gold: gold_index(corpus, norm),
        }
    }

    pub fn polarity() -> Self {
        ClassifierPolicy::Polarity {
            cues: NEGATION_CUES.iter().map(|c| c.to_string()).collect(),
        }
    }

    pub fn stochastic(seed: u64) -> Self {
        ClassifierPolicy::Stochastic { seed, gold: None }
    }

    pub fn informed_stochastic(seed: u64, corpus: &Corpus, norm: &NormalizationConfig) -> Self {
        ClassifierPolicy::Stochastic {
            seed,
            gold: Some(gold_index(corpus, norm)),
        }
    }
}

fn gold_index(corpus: &Corpus, norm: &NormalizationConfig) -> HashSet<(String, String)> {
    corpus
        .gold
        .values()
        .flatten()
        .map(|g| (g.entity_type.to_lowercase(), normalize(&g.surface, norm)))
        .collect()
}

pub struct MockClassifier {
    policy: ClassifierPolicy,
    norm: NormalizationConfig,
    calls: AtomicUsize,
}

impl MockClassifier {
    pub fn new(policy: ClassifierPolicy) -> Self {
        MockClassifier {
            policy,
            norm: NormalizationConfig::default(),
            calls: AtomicUsize::new(0),
        }
    }

    pub fn with_normalization(mut self, norm: NormalizationConfig) -> Self {
        self.norm = norm;
        self
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    fn p_no(&self, q: &FilterQuery<'_>) -> f64 {
        let key = || {
            (
                q.entity_type.name.to_lowercase(),
                normalize(q.entity, &self.norm),
            )
        };
        let decisive = |no: bool| if no { CONFIDENT_NO } else { 1.0 - CONFIDENT_NO };
        match &self.policy {
            ClassifierPolicy::Fixed { lp_yes, lp_no } => 1.0 / (1.0 + (lp_yes - lp_no).exp()),
            ClassifierPolicy::Oracle { gold } => decisive(!gold.contains(&key())),
            ClassifierPolicy::Polarity { cues } => decisive(
                cues.iter()
                    .any(|cue| !ground_text(&q.context.text, cue, &self.norm).is_empty()),
            ),
            ClassifierPolicy::Stochastic { seed, gold } => {
                let (t, e) = key();
                let u = unit_interval(*seed, &["filter", &t, &e, &q.context.text]);
                match gold {
                    None => u,
                    Some(g) if g.contains(&(t, e)) => 0.7 * u,
                    Some(_) => 0.3 + 0.7 * u,
                }
            }
        }
    }
}

impl Classifier for MockClassifier {
    fn classify(&self, query: &FilterQuery<'_>) -> Result<CompletionResponse, BackendError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        if let ClassifierPolicy::Fixed { lp_yes, lp_no } = self.policy {
            return Ok(CompletionResponse::from_yes_no(lp_yes, lp_no));
        }
        let p = self.p_no(query);
        Ok(CompletionResponse::from_yes_no((1.0 - p).ln(), p.ln()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::context::ContextWindow;
    use crate::context::ContextMode;
    use crate::types::{EntityTypeSpec, SubTypeSource};
    use std::collections::BTreeMap;

    fn gaz() -> Arc<Gazetteer> {
        Arc::new(
            Gazetteer::new(
                BTreeMap::from([
                    ("medication".to_string(), vec!["aspirin".to_string(), "insulin".to_string()]),
                    ("medical procedure".to_string(), vec!["appendectomy".to_string()]),
                ]),
                BTreeMap::from([("medical procedure".to_string(), vec!["endoscopy".to_string()])]),
                BTreeMap::new(),
            )
            .unwrap(),
        )
    }

    #[test]
    fn canned_counts_calls() {
        let m = CannedCompletion::new("[\"aspirin\"]");
        let req = CompletionRequest::new("p", &super::super::Decoding::GREEDY);
        assert_eq!(m.complete(&req).unwrap().text, "[\"aspirin\"]");
        assert_eq!(m.calls(), 1);
    }

    #[test]
    fn gazetteer_single() {
        let ner = GazetteerNer::new(gaz());
        assert_eq!(ner.extract_single("took Aspirin daily", "medication").unwrap(), vec!["Aspirin"]);
        assert!(ner.extract_single("nothing here", "medication").unwrap().is_empty());
        assert!(ner.extract_single("took aspirin", "unknown type").unwrap().is_empty());
        assert_eq!(ner.calls(), 3);
    }

    #[test]
    fn gazetteer_orders_by_position() {
        let ner = GazetteerNer::new(gaz());
        assert_eq!(
            ner.extract_single("insulin then aspirin then insulin", "medication").unwrap(),
            vec!["insulin", "aspirin"]
        );
    }

    #[test]
    fn gazetteer_multi_is_one_call() {
        let ner = GazetteerNer::new(gaz()).with_arity(Arity::Multi);
        let s = SubTypeSet::new(
            "treatment",
            SubTypeSource::Custom,
            vec!["medication".into(), "medical procedure".into()],
        )
        .unwrap();
        let out = ner
            .extract_multi("aspirin given after appendectomy", &s)
            .unwrap();
        assert_eq!(
            out,
            vec![
                ("medication".to_string(), vec!["aspirin".to_string()]),
                ("medical procedure".to_string(), vec!["appendectomy".to_string()]),
            ]
        );
        assert_eq!(ner.calls(), 1);
    }

    #[test]
    fn contamination_extremes() {
        let text = "endoscopy and appendectomy";
        let never = GazetteerNer::new(gaz());
        assert_eq!(never.extract_single(text, "medical procedure").unwrap(), vec!["appendectomy"]);
        let always = GazetteerNer::new(gaz()).with_contamination(1.0, 3);
        assert_eq!(
            always.extract_single(text, "medical procedure").unwrap(),
            vec!["endoscopy", "appendectomy"]
        );
    }

    fn query<'a>(entity: &'a str, t: &'a EntityTypeSpec, c: &'a ContextWindow) -> FilterQuery<'a> {
        FilterQuery {
            entity,
            entity_type: t,
            context: c,
            prompt: "",
        }
    }

    #[test]
    fn polarity_policy_reads_context() {
        let m = MockClassifier::new(ClassifierPolicy::polarity());
        let t = EntityTypeSpec::new("problem").unwrap();
        let neg = ContextWindow {
            mode: ContextMode::Sentence,
            text: "Patient denies chest pain.".into(),
            ungrounded: false,
        };
        let pos = ContextWindow {
            text: "Chest pain since Monday.".into(),
            ..neg.clone()
        };
        assert_eq!(m.classify(&query("chest pain", &t, &neg)).unwrap().text, "No");
        assert_eq!(m.classify(&query("chest pain", &t, &pos)).unwrap().text, "Yes");
        assert_eq!(m.calls(), 2);
    }

    #[test]
    fn stochastic_is_deterministic() {
        let a = MockClassifier::new(ClassifierPolicy::stochastic(5));
        let b = MockClassifier::new(ClassifierPolicy::stochastic(5));
        let t = EntityTypeSpec::new("test").unwrap();
        let c = ContextWindow::empty(ContextMode::None);
        for e in ["a", "b", "c", "d"] {
            assert_eq!(a.classify(&query(e, &t, &c)).unwrap(), b.classify(&query(e, &t, &c)).unwrap());
        }
    }
}
