#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use edf_core::backend::MockSpec;
use edf_core::corpus::generate_synthetic;
use edf_core::{
    BackendDescriptor, BackendKind, Backends, ContextMode, Corpus, DocPrediction, FilterConfig, Gazetteer, MockPolicy,
    NormalizationConfig, Pipeline, RunArtifacts, RunConfig, RunMode, SubTypeSource,
};

pub const TARGETS: [&str; 3] = ["treatment", "problem", "test"];

pub fn corpus(seed: u64, n_docs: usize) -> Corpus {
    generate_synthetic(seed, n_docs, &Gazetteer::clinical_demo()).unwrap()
}

pub fn mock_ner(contamination: f64, seed: u64) -> BackendDescriptor {
    let mut d = BackendDescriptor::new(BackendKind::Mock);
    d.mock = Some(MockSpec {
        contamination_rate: contamination,
        seed,
        ..MockSpec::default()
    });
    d
}

pub fn mock_filter(policy: MockPolicy, seed: u64, context: ContextMode) -> FilterConfig {
    let mut d = BackendDescriptor::new(BackendKind::Mock);
    d.mock = Some(MockSpec {
        policy,
        seed,
        ..MockSpec::default()
    });
    let mut f = FilterConfig::new(d);
    f.context = context;
    f
}

pub fn config(mode: RunMode, contamination: f64, filter: Option<FilterConfig>) -> RunConfig {
    let mut c = RunConfig::new(mode, TARGETS.iter().map(|t| t.to_string()).collect(), mock_ner(contamination, 7));
    if mode.decomposes() {
        c.decomposer = Some(SubTypeSource::Annotation);
    }
    c.filter = filter;
    c
}

pub fn run(cfg: &RunConfig, corpus: &Corpus) -> RunArtifacts {
    let backends = Backends::from_config(cfg, Some(corpus)).unwrap();
    Pipeline::new(cfg.clone(), backends)
        .unwrap()
        .run_corpus(corpus, None, None, None)
        .unwrap()
}

pub fn targets() -> Vec<String> {
    TARGETS.iter().map(|t| t.to_string()).collect()
}

pub type UnitSets = BTreeMap<(String, String), BTreeSet<String>>;

/// Normalized mention sets per (document, type), optionally restricted by
/// a predicate on the mention.
pub fn unit_sets(preds: &[DocPrediction], keep: impl Fn(&edf_core::Mention) -> bool) -> UnitSets {
    let norm = NormalizationConfig::default();
    preds
        .iter()
        .map(|p| {
            let set = p
                .candidates
                .iter()
                .filter(|m| keep(m))
                .map(|m| edf_core::normalize(&m.surface, &norm))
                .collect();
            ((p.doc_id.clone(), p.entity_type.clone()), set)
        })
        .collect()
}

pub fn subset(a: &UnitSets, b: &UnitSets) -> bool {
    a.iter()
        .all(|(k, s)| s.is_empty() || b.get(k).is_some_and(|t| s.is_subset(t)))
}
