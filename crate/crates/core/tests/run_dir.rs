mod common;

use std::fs::OpenOptions;
use std::io::Write;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Arc;

use edf_core::backend::mock::{ClassifierPolicy, GazetteerNer, MockClassifier};
use edf_core::corpus::{load_run, persist_run};
use edf_core::{
    Arity, Backends, BackendError, ContextMode, Error, Gazetteer, MockPolicy, NerBackend, Pipeline, RunMode,
    SubTypeSet, UnitStatus,
};

use common::*;

/// Delegates to the gazetteer mock but fails every call while `down` is set.
struct Flaky {
    inner: GazetteerNer,
    down: AtomicBool,
    calls: AtomicUsize,
}

impl NerBackend for Flaky {
    fn arity(&self) -> Arity {
        Arity::Single
    }

    fn extract_single(&self, text: &str, subtype: &str) -> edf_core::Result<Vec<String>> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        if self.down.load(Ordering::SeqCst) && text.to_lowercase().contains("patient") {
            return Err(BackendError::Network {
                attempts: 1,
                message: "connection refused".into(),
            }
            .into());
        }
        self.inner.extract_single(text, subtype)
    }

    fn extract_multi(&self, text: &str, subtypes: &SubTypeSet) -> edf_core::Result<Vec<(String, Vec<String>)>> {
        self.inner.extract_multi(text, subtypes)
    }
}

fn edf_config() -> edf_core::RunConfig {
    let mut c = config(
        RunMode::Edf,
        0.3,
        Some(mock_filter(MockPolicy::Stochastic, 3, ContextMode::Sentence)),
    );
    c.concurrency = 2;
    c
}

#[test]
fn persisted_run_loads_back_identically() {
    let corpus = corpus(1, 12);
    let run = run(&edf_config(), &corpus);
    let dir = tempfile::tempdir().unwrap();
    persist_run(dir.path(), &run).unwrap();
    assert_eq!(load_run(dir.path()).unwrap(), run);
    for name in ["config.json", "predictions.jsonl", "verdicts.jsonl", "report.json"] {
        assert!(dir.path().join(name).is_file(), "{name}");
    }
    let preds = std::fs::read_to_string(dir.path().join("predictions.jsonl")).unwrap();
    assert!(!preds.contains("p_no"), "verdicts belong in verdicts.jsonl only");
}

#[test]
fn missing_files_are_named() {
    let corpus = corpus(1, 3);
    let run = run(&edf_config(), &corpus);
    for name in ["config.json", "predictions.jsonl", "verdicts.jsonl", "report.json"] {
        let dir = tempfile::tempdir().unwrap();
        persist_run(dir.path(), &run).unwrap();
        std::fs::remove_file(dir.path().join(name)).unwrap();
        match load_run(dir.path()) {
            Err(Error::RunFileMissing { missing, .. }) => assert_eq!(missing, name),
            other => panic!("{name}: {other:?}"),
        }
    }
}

#[test]
fn failed_units_are_retried_on_resume() {
    let corpus = corpus(2, 20);
    let flaky = Arc::new(Flaky {
        inner: GazetteerNer::new(Arc::new(Gazetteer::clinical_demo())).with_contamination(0.3, 7),
        down: AtomicBool::new(true),
        calls: AtomicUsize::new(0),
    });
    let clf = Arc::new(MockClassifier::new(ClassifierPolicy::stochastic(3)));
    let pipeline = Pipeline::new(edf_config(), Backends::new(flaky.clone()).with_classifier(clf)).unwrap();
    let dir = tempfile::tempdir().unwrap();

    let first = pipeline.run_corpus(&corpus, Some(dir.path()), None, None).unwrap();
    let failed: Vec<_> = first
        .predictions
        .iter()
        .filter(|p| p.status == UnitStatus::Failed)
        .map(|p| (p.doc_id.clone(), p.entity_type.clone()))
        .collect();
    assert!(!failed.is_empty(), "some documents mention the patient");
    assert!(first.report.failures.len() == failed.len());

    flaky.down.store(false, Ordering::SeqCst);
    let before = flaky.calls.load(Ordering::SeqCst);
    let second = pipeline.run_corpus(&corpus, Some(dir.path()), None, None).unwrap();
    assert!(second.predictions.iter().all(|p| p.is_ok()));
    let per_unit = TARGETS.iter().map(|t| pipeline.subtypes(t).unwrap().len()).max().unwrap();
    let retried = flaky.calls.load(Ordering::SeqCst) - before;
    assert!(retried > 0 && retried <= failed.len() * per_unit, "{retried} calls");

    let clean = run(&edf_config(), &corpus);
    assert_eq!(second.report, clean.report);
}

#[test]
fn torn_writes_and_orphan_verdicts_are_discarded() {
    let corpus = corpus(3, 10);
    let cfg = edf_config();
    let dir = tempfile::tempdir().unwrap();
    let full = {
        let b = Backends::from_config(&cfg, Some(&corpus)).unwrap();
        Pipeline::new(cfg.clone(), b)
            .unwrap()
            .run_corpus(&corpus, Some(dir.path()), None, None)
            .unwrap()
    };
    // drop the last two predictions, keep their verdicts as orphans, and
    // leave half a line behind
    let path = dir.path().join("predictions.jsonl");
    let text = std::fs::read_to_string(&path).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    let mut kept = lines[..lines.len() - 2].join("\n");
    kept.push('\n');
    kept.push_str(&lines[lines.len() - 1][..20]);
    std::fs::write(&path, kept).unwrap();
    let mut v = OpenOptions::new().append(true).open(dir.path().join("verdicts.jsonl")).unwrap();
    v.write_all(b"{\"doc_id\":\"synth-00").unwrap();
    drop(v);

    let ner = Arc::new(GazetteerNer::new(Arc::new(Gazetteer::clinical_demo())).with_contamination(0.3, 7));
    let clf = Arc::new(MockClassifier::new(ClassifierPolicy::stochastic(3)));
    let resumed = Pipeline::new(cfg, Backends::new(ner.clone()).with_classifier(clf))
        .unwrap()
        .run_corpus(&corpus, Some(dir.path()), None, None)
        .unwrap();
    assert_eq!(resumed.report, full.report);
    assert_eq!(resumed.predictions, full.predictions);
    assert!(ner.calls() > 0 && ner.calls() <= 2 * 16, "{} calls", ner.calls());
    assert_eq!(load_run(dir.path()).unwrap(), full);
}

#[test]
fn resume_requires_the_same_config() {
    let corpus = corpus(4, 4);
    let cfg = edf_config();
    let dir = tempfile::tempdir().unwrap();
    let go = |cfg: &edf_core::RunConfig| {
        let b = Backends::from_config(cfg, Some(&corpus)).unwrap();
        Pipeline::new(cfg.clone(), b)
            .unwrap()
            .run_corpus(&corpus, Some(dir.path()), None, None)
    };
    go(&cfg).unwrap();
    let mut wider = cfg.clone();
    wider.concurrency = 7;
    go(&wider).unwrap();
    let mut other = cfg.clone();
    other.filter.as_mut().unwrap().threshold = 0.4;
    assert!(matches!(go(&other), Err(Error::RunDir { .. })));
}

#[test]
fn interrupted_run_keeps_finished_units() {
    let corpus = corpus(5, 30);
    let mut cfg = edf_config();
    cfg.concurrency = 1;
    let b = Backends::from_config(&cfg, Some(&corpus)).unwrap();
    let pipeline = Pipeline::new(cfg, b).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let cancel = AtomicBool::new(true);
    let err = pipeline
        .run_corpus(&corpus, Some(dir.path()), Some(&cancel), None)
        .unwrap_err();
    assert!(matches!(err, Error::Interrupted { completed: 0, total: 90 }), "{err}");
    assert!(err.to_string().contains("resume"));
    assert!(!dir.path().join("report.json").exists());
    let done = pipeline.run_corpus(&corpus, Some(dir.path()), None, None).unwrap();
    assert_eq!(done.predictions.len(), 90);
    assert!(dir.path().join("report.json").exists());
}
