//! Fixtures shared by the benchmarks in `benches/`.

use edf_core::corpus::generate_synthetic;
use edf_core::{
    BackendDescriptor, BackendKind, ContextMode, Corpus, FilterConfig, Gazetteer, MockPolicy, MockSpec, RunConfig,
    RunMode, SubTypeSource,
};

pub fn corpus(docs: usize) -> Corpus {
    generate_synthetic(7, docs, &Gazetteer::clinical_demo()).expect("bundled gazetteer")
}

/// Mock NER and a stochastic mock filter over the three i2b2-style targets.
pub fn config(mode: RunMode) -> RunConfig {
    let mut ner = BackendDescriptor::new(BackendKind::Mock);
    ner.mock = Some(MockSpec {
        contamination_rate: 0.3,
        seed: 3,
        ..MockSpec::default()
    });
    let targets = ["treatment", "problem", "test"].map(String::from).to_vec();
    let mut cfg = RunConfig::new(mode, targets, ner);
    if mode.decomposes() {
        cfg.decomposer = Some(SubTypeSource::Annotation);
    }
    if mode.filters() {
        let mut b = BackendDescriptor::new(BackendKind::Mock);
        b.mock = Some(MockSpec {
            policy: MockPolicy::Stochastic,
            seed: 3,
            ..MockSpec::default()
        });
        let mut f = FilterConfig::new(b);
        f.context = ContextMode::Sentence;
        cfg.filter = Some(f);
    }
    cfg.concurrency = 1;
    cfg
}
