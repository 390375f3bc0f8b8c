//! Seeded synthetic discharge summaries.

use std::collections::{BTreeMap, HashSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Corpus, Gazetteer};
use crate::error::{Error, Result};
use crate::types::{normalize, Document, EntityTypeSpec, GoldEntity, NormalizationConfig, Polarity, Span};

/// Phrases that mark a negated mention. Positive templates never contain them.
pub const NEGATION_CUES: &[&str] = &["denies", "no evidence of", "negative for", "ruled out"];

const SECTIONS: &[&str] = &[
    "HISTORY OF PRESENT ILLNESS:",
    "PAST MEDICAL HISTORY:",
    "HOSPITAL COURSE:",
    "PERTINENT RESULTS:",
    "DISCHARGE MEDICATIONS:",
    "ASSESSMENT AND PLAN:",
];

const NEGATED: &[&str] = &[
    "Patient denies {}.",
    "There is no evidence of {}.",
    "Negative for {}.",
    "{} was ruled out.",
];

const DISTRACTOR: &[&str] = &[
    "Family discussed {} with the team.",
    "The note also mentions {}.",
    "{} was reviewed with nursing.",
];

const FILLER: &[&str] = &[
    "Patient tolerated the plan well.",
    "Will follow up as an outpatient.",
    "Course otherwise unremarkable.",
    "Family at bedside and updated.",
];

fn positive_templates(target: &str) -> &'static [&'static str] {
    match target.to_lowercase().as_str() {
        "treatment" => &[
            "The patient was started on {}.",
            "{} was continued during the admission.",
            "She received {} without complication.",
        ],
        "problem" => &[
            "The patient presented with {}.",
            "Exam was notable for {}.",
            "History is significant for {}.",
        ],
        "test" => &[
            "{} was obtained on admission.",
            "The team ordered {}.",
            "Results of {} were reviewed.",
        ],
        _ => &["{} was documented.", "The chart mentions {}."],
    }
}

fn capitalize(s: &str) -> String {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) => c.to_uppercase().chain(chars).collect(),
        None => String::new(),
    }
}

struct DocBuilder {
    text: String,
    chars: usize,
    gold: Vec<GoldEntity>,
}

impl DocBuilder {
    fn push(&mut self, s: &str) {
        self.text.push_str(s);
        self.chars += s.chars().count();
    }

    /// Appends a sentence built from `template`, returning the inserted span.
    fn sentence(&mut self, template: &str, surface: &str) -> (Span, String) {
        let (pre, post) = template.split_once("{}").expect("template has a slot");
        let written = if pre.is_empty() { capitalize(surface) } else { surface.to_string() };
        self.push(pre);
        let start = self.chars;
        self.push(&written);
        let span = Span::new(start, self.chars);
        self.push(post);
        (span, written)
    }
}

/// Generates `n_docs` templated discharge summaries from a gazetteer.
///
/// Each sentence carries at most one entity and each surface appears at most
/// once per document. Sentences built from a negation template carry a
/// negative gold entity; all other gold entities are positive. Off-type
/// contamination surfaces appear as unannotated filler.
pub fn generate_synthetic(seed: u64, n_docs: usize, gazetteer: &Gazetteer) -> Result<Corpus> {
    let pool = gazetteer.entity_pool()?;
    if pool.is_empty() {
        return Err(Error::invalid(
            "gazetteer",
            "no surfaces mapped to a target type; cannot generate documents",
        ));
    }
    let distractors = gazetteer.distractor_pool();
    let types = gazetteer
        .target_types()
        .into_iter()
        .map(EntityTypeSpec::known)
        .collect::<Result<Vec<_>>>()?;
    let cfg = NormalizationConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut documents = Vec::with_capacity(n_docs);
    let mut gold = BTreeMap::new();

    for i in 0..n_docs {
        let mut b = DocBuilder {
            text: String::new(),
            chars: 0,
            gold: Vec::new(),
        };
        let mut used = HashSet::new();
        let n_sections = rng.gen_range(2..=4);
        let mut sections: Vec<&str> = SECTIONS.choose_multiple(&mut rng, n_sections).copied().collect();
        sections.sort_by_key(|s| SECTIONS.iter().position(|x| x == s));
        for (k, header) in sections.into_iter().enumerate() {
            if k > 0 {
                b.push("\n\n");
            }
            b.push(header);
            let n_sentences = rng.gen_range(1..=5);
            for _ in 0..n_sentences {
                b.push("\n");
                let roll: f64 = rng.gen();
                if roll < 0.8 {
                    let (surface, target) = pool.choose(&mut rng).expect("non-empty pool");
                    if !used.insert(normalize(surface, &cfg)) {
                        b.push(FILLER.choose(&mut rng).expect("filler"));
                        continue;
                    }
                    let negated = roll < 0.2;
                    let template = if negated {
                        NEGATED.choose(&mut rng)
                    } else {
                        positive_templates(target).choose(&mut rng)
                    }
                    .expect("templates");
                    let (span, written) = b.sentence(template, surface);
                    b.gold.push(GoldEntity {
                        surface: written,
                        span,
                        entity_type: target.clone(),
                        polarity: if negated { Polarity::Negative } else { Polarity::Positive },
                    });
                } else if roll < 0.93 && !distractors.is_empty() {
                    let surface = distractors.choose(&mut rng).expect("non-empty");
                    if !used.insert(normalize(surface, &cfg)) {
                        b.push(FILLER.choose(&mut rng).expect("filler"));
                        continue;
                    }
                    let template = DISTRACTOR.choose(&mut rng).expect("templates");
                    b.sentence(template, surface);
                } else {
                    b.push(FILLER.choose(&mut rng).expect("filler"));
                }
            }
        }
        let doc = Document::new(format!("synth-{i:04}"), b.text);
        if !b.gold.is_empty() {
            gold.insert(doc.id().to_string(), b.gold);
        }
        documents.push(doc);
    }
    Corpus::new(documents, gold, types)
}
