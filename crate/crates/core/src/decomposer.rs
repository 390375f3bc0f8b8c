//! Entity decomposition: the sub-types retrieved in place of a target type.

use std::collections::BTreeMap;
use std::path::Path;

use crate::backend::{parse_entity_list, render_prompt, CompletionBackend, CompletionRequest, Decoding, TemplateId};
use crate::backend::strip_bullet;
use crate::error::{BackendError, Error, Result};
use crate::types::{EntityTypeSpec, SubTypeSet, SubTypeSource};

const ANNOTATION: &[(&str, &str)] = &[
    (
        "treatment",
        "medical treatment, medical intervention, medical procedure, medical device, treatment, biological substance, drug, medication",
    ),
    (
        "problem",
        "medical problem, disease, syndrome, symptom, medical condition, behavior, virus, bacterium, injury, abnormality, abnormal test result, mental status",
    ),
    (
        "test",
        "medical test, medical procedure, medical panel, medical examination, medical evaluation, test, procedure, laboratory procedure, diagnostic procedure, panel, measure, physiologic measure, vital sign, examination, evaluation",
    ),
    (
        "clinical department",
        "clinical department, medical department, clinical unit, clinical service, clinical practice, clinical room, department, location, building, hospital",
    ),
    (
        "disease/disorder",
        "medical problem, disease, syndrome, symptom, medical condition, behavior, virus, bacterium, injury, abnormality, abnormal test result",
    ),
    ("adverse drug", "drug"),
    ("adverse drug event", "medical problem"),
];

const LLM_GENERATED: &[(&str, &str)] = &[
    (
        "treatment",
        "medical treatment, medication, medical procedure, therapy, medical intervention, consultation, counseling, discharge instruction, supportive care",
    ),
    (
        "problem",
        "medical problem, medical diagnosis, disease, abnormal test result, symptom, abnormal imaging finding, complication, chronic health condition, medication side effect, mental health issue, social determinants of health",
    ),
    (
        "test",
        "medical test, laboratory test, imaging study, diagnostic procedure, genetic test, electrodiagnostic test, functional test, microbiological test",
    ),
];

const UMLS: &[(&str, &str)] = &[
    (
        "treatment",
        "medical treatment, therapeutic procedure, preventive procedure, medical device, steroid, pharmacologic substance, biomedical material, dental material, antibiotic, clinical drug, drug delivery device",
    ),
    (
        "problem",
        "medical problem, pathologic function, disease, syndrome, mental dysfunction, behavioral dysfunction, cell dysfunction, molecular dysfunction, congenital abnormality, acquired abnormality, injury, poisoning, anatomic abnormality, neoplastic process, virus, bacterium, symptom",
    ),
    (
        "test",
        "medical test, laboratory procedure, diagnostic procedure",
    ),
];

/// Short names used for the clinical targets in tables and flags.
const ALIASES: &[(&str, &str)] = &[
    ("tr", "treatment"),
    ("pr", "problem"),
    ("te", "test"),
    ("cd", "clinical department"),
    ("dd", "disease/disorder"),
    ("disease disorder", "disease/disorder"),
    ("ad", "adverse drug"),
    ("ade", "adverse drug event"),
];

fn target_key(target: &str) -> String {
    let key = target.trim().to_lowercase();
    ALIASES
        .iter()
        .find(|(a, _)| *a == key)
        .map(|(_, t)| t.to_string())
        .unwrap_or(key)
}

/// Curated sub-type lists keyed by (source, target).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DecomposerRegistry {
    lists: BTreeMap<(SubTypeSource, String), Vec<String>>,
}

impl Default for DecomposerRegistry {
    fn default() -> Self {
        Self::builtin()
    }
}

impl DecomposerRegistry {
    pub fn empty() -> Self {
        DecomposerRegistry {
            lists: BTreeMap::new(),
        }
    }

    /// Registry preloaded with the annotation-guideline, LLM-generated and
    /// UMLS lists.
    pub fn builtin() -> Self {
        let mut r = Self::empty();
        for (source, table) in [
            (SubTypeSource::Annotation, ANNOTATION),
            (SubTypeSource::LlmGenerated, LLM_GENERATED),
            (SubTypeSource::Umls, UMLS),
        ] {
            for (target, list) in table {
                r.insert(source, target, list.split(", ").map(str::to_string).collect());
            }
        }
        r
    }

    pub fn insert(&mut self, source: SubTypeSource, target: &str, subtypes: Vec<String>) {
        self.lists.insert((source, target_key(target)), subtypes);
    }

    /// Case-insensitive lookup on the target name.
    pub fn get(&self, source: SubTypeSource, target: &str) -> Option<&[String]> {
        self.lists
            .get(&(source, target_key(target)))
            .map(Vec::as_slice)
    }

    /// Registered (source, target) pairs.
    pub fn entries(&self) -> impl Iterator<Item = (SubTypeSource, &str)> {
        self.lists.keys().map(|(s, t)| (*s, t.as_str()))
    }

    /// Loads a custom list for `target`: one sub-type per line, blank lines
    /// and `#` comments ignored.
    pub fn load_custom(&mut self, target: &str, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let list: Vec<String> = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .map(str::to_string)
            .collect();
        // validate now so the error names the file
        SubTypeSet::new(target, SubTypeSource::Custom, list.clone()).map_err(|e| Error::Line {
            path: path.to_path_buf(),
            line: 0,
            message: e.to_string(),
        })?;
        self.insert(SubTypeSource::Custom, target, list);
        Ok(())
    }

    /// The registered list for (source, target), verbatim.
    pub fn decompose(&self, target: &EntityTypeSpec, source: SubTypeSource) -> Result<SubTypeSet> {
        let list = self
            .get(source, &target.name)
            .ok_or_else(|| Error::UnknownDecomposition {
                origin: source.to_string(),
                target: target.name.clone(),
            })?;
        SubTypeSet::new(target.name.clone(), source, list.to_vec())
    }
}

/// Appends the target name unless it is already present.
pub fn ensure_target_included(s: SubTypeSet) -> SubTypeSet {
    if s.contains(s.target()) {
        return s;
    }
    let mut list = s.subtypes().to_vec();
    list.push(s.target().to_string());
    SubTypeSet::new(s.target().to_string(), s.source(), list).expect("adding an absent name keeps the set valid")
}

/// Splits an LLM answer into sub-type names. Accepts comma-separated,
/// newline-separated and bulleted lists; when bullets are present only the
/// bulleted lines count. Duplicates (case-insensitive) and empties are dropped.
pub fn parse_subtype_list(raw: &str) -> Result<Vec<String>, BackendError> {
    let lines: Vec<&str> = raw.lines().map(str::trim).filter(|l| !l.is_empty()).collect();
    let bulleted: Vec<&str> = lines
        .iter()
        .map(|l| strip_bullet(l))
        .zip(&lines)
        .filter(|(stripped, l)| stripped.len() != l.len())
        .map(|(stripped, _)| stripped)
        .collect();
    let items: Vec<String> = if !bulleted.is_empty() {
        bulleted.iter().map(|s| s.to_string()).collect()
    } else if raw.trim_start().starts_with('[') {
        parse_entity_list(raw)?
    } else {
        lines
            .iter()
            .flat_map(|l| l.split(','))
            .map(str::to_string)
            .collect()
    };
    let mut out: Vec<String> = Vec::new();
    for item in items {
        let item = item
            .trim()
            .trim_end_matches('.')
            .trim_matches(|c| c == '"' || c == '\'')
            .trim()
            .to_string();
        if item.is_empty() || out.iter().any(|o| o.eq_ignore_ascii_case(&item)) {
            continue;
        }
        out.push(item);
    }
    if out.is_empty() {
        return Err(BackendError::Unparseable { raw: raw.to_string() });
    }
    Ok(out)
}

/// Asks a language model for the sub-types of `target`; the target itself is
/// appended when missing.
pub fn decompose_llm(
    target: &EntityTypeSpec,
    backend: &dyn CompletionBackend,
    decoding: &Decoding,
) -> Result<SubTypeSet> {
    let prompt = render_prompt(TemplateId::Decompose, &[("entity_type", &target.name)])?;
    let req = CompletionRequest::new(prompt, decoding);
    req.validate()?;
    let resp = backend.complete(&req)?;
    let list = parse_subtype_list(&resp.text)?;
    Ok(ensure_target_included(SubTypeSet::new(
        target.name.clone(),
        SubTypeSource::LlmGenerated,
        list,
    )?))
}
