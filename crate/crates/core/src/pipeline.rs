//! Run modes over documents and corpora: baseline, decomposition (ED),
//! filter-only (F) and decomposition with filtering (EDF).

use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backend::mock::{ClassifierPolicy, GazetteerNer, MockClassifier};
use crate::backend::{
    Arity, BackendKind, Classifier, CompletionBackend, HttpBackend, MockPolicy, MockSpec, NerBackend,
    PromptedClassifier, PromptedNer,
};
use crate::context::ground;
use crate::corpus::{Corpus, Gazetteer, RunArtifacts, RunWriter};
use crate::decomposer::{decompose_llm, ensure_target_included, DecomposerRegistry};
use crate::error::{Error, Result};
use crate::eval::score_predictions;
use crate::filter::filter_set;
use crate::types::{Document, EntityTypeSpec, Mention, SubTypeSet, SubTypeSource};

pub use crate::config::{InputUnit, RunConfig, RunMode};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UnitStatus {
    Ok,
    Failed,
}

/// Result of one (document, target type) unit. `candidates` holds every
/// extracted mention, with verdicts in filtering modes; the final prediction
/// is the accepted subset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocPrediction {
    pub doc_id: String,
    pub entity_type: String,
    pub status: UnitStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default)]
    pub candidates: Vec<Mention>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl DocPrediction {
    pub fn is_ok(&self) -> bool {
        self.status == UnitStatus::Ok
    }

    /// Final predictions.
    pub fn accepted(&self) -> impl Iterator<Item = &Mention> {
        self.candidates.iter().filter(|m| m.is_accepted())
    }
}

/// Mentions produced for one unit, in canonical order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Extraction {
    pub mentions: Vec<Mention>,
    pub warnings: Vec<String>,
}

impl Extraction {
    pub fn accepted(&self) -> Vec<&Mention> {
        self.mentions.iter().filter(|m| m.is_accepted()).collect()
    }
}

/// Model services a pipeline talks to.
#[derive(Clone)]
pub struct Backends {
    pub ner: Arc<dyn NerBackend>,
    pub classifier: Option<Arc<dyn Classifier>>,
    pub decomposer: Option<Arc<dyn CompletionBackend>>,
}

impl Backends {
    pub fn new(ner: Arc<dyn NerBackend>) -> Self {
        Backends {
            ner,
            classifier: None,
            decomposer: None,
        }
    }

    pub fn with_classifier(mut self, classifier: Arc<dyn Classifier>) -> Self {
        self.classifier = Some(classifier);
        self
    }

    pub fn with_decomposer(mut self, backend: Arc<dyn CompletionBackend>) -> Self {
        self.decomposer = Some(backend);
        self
    }

    /// Builds the services described by a configuration. Gold-aware mock
    /// policies read the corpus.
    pub fn from_config(cfg: &RunConfig, corpus: Option<&Corpus>) -> Result<Self> {
        let ner: Arc<dyn NerBackend> = match cfg.ner.kind {
            BackendKind::Mock => {
                let spec = cfg.ner.mock.clone().unwrap_or_default();
                let gazetteer = match &spec.gazetteer {
                    Some(p) => Gazetteer::load(p)?,
                    None => Gazetteer::clinical_demo(),
                };
                let arity = if spec.multi { Arity::Multi } else { Arity::Single };
                Arc::new(
                    GazetteerNer::new(Arc::new(gazetteer))
                        .with_contamination(spec.contamination_rate, spec.seed)
                        .with_arity(arity)
                        .with_normalization(cfg.normalization),
                )
            }
            BackendKind::Classifier => {
                return Err(Error::Config("ner.kind: a classifier cannot serve entity extraction".into()))
            }
            _ => Arc::new(PromptedNer::new(
                Arc::new(HttpBackend::new(cfg.ner.clone())?),
                cfg.ner.clone(),
            )),
        };
        let classifier: Option<Arc<dyn Classifier>> = match &cfg.filter {
            None => None,
            Some(f) if f.backend.kind == BackendKind::Mock => {
                let spec = f.backend.mock.clone().unwrap_or_default();
                Some(Arc::new(
                    MockClassifier::new(mock_policy(&spec, corpus, cfg)?).with_normalization(cfg.normalization),
                ))
            }
            Some(f) => Some(Arc::new(PromptedClassifier::new(
                Arc::new(HttpBackend::new(f.backend.clone())?),
                f.backend.clone(),
            ))),
        };
        let decomposer: Option<Arc<dyn CompletionBackend>> = match &cfg.decomposer_backend {
            Some(d) if d.kind != BackendKind::Mock => Some(Arc::new(HttpBackend::new(d.clone())?)),
            _ => None,
        };
        Ok(Backends {
            ner,
            classifier,
            decomposer,
        })
    }
}

fn mock_policy(spec: &MockSpec, corpus: Option<&Corpus>, cfg: &RunConfig) -> Result<ClassifierPolicy> {
    let need_corpus = || {
        corpus.ok_or_else(|| Error::Config(format!("mock policy {:?} needs the gold corpus", spec.policy)))
    };
    Ok(match spec.policy {
        MockPolicy::Oracle => ClassifierPolicy::oracle(need_corpus()?, &cfg.normalization),
        MockPolicy::Polarity => ClassifierPolicy::polarity(),
        MockPolicy::Stochastic => ClassifierPolicy::stochastic(spec.seed),
        MockPolicy::InformedStochastic => {
            ClassifierPolicy::informed_stochastic(spec.seed, need_corpus()?, &cfg.normalization)
        }
        MockPolicy::Fixed => ClassifierPolicy::Fixed {
            lp_yes: spec.lp_yes,
            lp_no: spec.lp_no,
        },
    })
}

/// Progress callback: (units done, units total).
pub type Progress<'a> = &'a (dyn Fn(usize, usize) + Sync);

pub struct Pipeline {
    config: RunConfig,
    backends: Backends,
    targets: Vec<EntityTypeSpec>,
    subtypes: BTreeMap<String, SubTypeSet>,
}

impl Pipeline {
    /// Validates the configuration and resolves the sub-type set of every
    /// target (querying the decomposer backend when one is configured).
    pub fn new(config: RunConfig, backends: Backends) -> Result<Self> {
        config.validate()?;
        if config.mode.filters() && backends.classifier.is_none() {
            return Err(Error::Config("missing field `filter.backend`: no classifier available".into()));
        }
        let targets = config
            .targets
            .iter()
            .map(|t| EntityTypeSpec::known(t.trim()))
            .collect::<Result<Vec<_>>>()?;
        let mut subtypes = BTreeMap::new();
        if let (true, Some(source)) = (config.mode.decomposes(), config.decomposer) {
            let mut registry = DecomposerRegistry::builtin();
            for (target, path) in &config.custom_subtypes {
                registry.load_custom(target, path)?;
            }
            for t in &targets {
                let set = match (&backends.decomposer, source) {
                    (Some(llm), SubTypeSource::LlmGenerated) => {
                        decompose_llm(t, llm.as_ref(), &config.decomposer_backend.as_ref().map_or(
                            crate::backend::Decoding::GREEDY,
                            |d| d.decoding,
                        ))?
                    }
                    _ => registry.decompose(t, source)?,
                };
                let set = if config.include_target {
                    ensure_target_included(set)
                } else {
                    set
                };
                subtypes.insert(t.name.to_lowercase(), set);
            }
        }
        Ok(Pipeline {
            config,
            backends,
            targets,
            subtypes,
        })
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn targets(&self) -> &[EntityTypeSpec] {
        &self.targets
    }

    /// Sub-type set used for a target in decomposing modes.
    pub fn subtypes(&self, target: &str) -> Option<&SubTypeSet> {
        self.subtypes.get(&target.to_lowercase())
    }

    fn inputs<'d>(&self, doc: &'d Document) -> Vec<&'d str> {
        match self.config.input_unit {
            InputUnit::Document if doc.text().trim().is_empty() => Vec::new(),
            InputUnit::Document => vec![doc.text()],
            InputUnit::Sentence => doc.sentence_texts().filter(|s| !s.trim().is_empty()).collect(),
        }
    }

    /// Raw surfaces per sub-type. A sub-type whose calls fail is recorded
    /// in `warnings`; the unit fails only when every sub-type failed.
    fn retrieve(&self, doc: &Document, set: &SubTypeSet, warnings: &mut Vec<String>) -> Result<Vec<(String, Vec<String>)>> {
        let inputs = self.inputs(doc);
        if inputs.is_empty() {
            return Ok(Vec::new());
        }
        let ner = &self.backends.ner;
        match ner.arity() {
            Arity::Multi => {
                let mut out: Vec<(String, Vec<String>)> = set.iter().map(|s| (s.to_string(), Vec::new())).collect();
                for input in inputs {
                    for (label, surfaces) in ner.extract_multi(input, set)? {
                        if let Some((_, acc)) = out.iter_mut().find(|(s, _)| s.eq_ignore_ascii_case(&label)) {
                            acc.extend(surfaces);
                        }
                    }
                }
                Ok(out)
            }
            Arity::Single => {
                let mut out = Vec::new();
                let mut last_err = None;
                for subtype in set.iter() {
                    let mut surfaces = Vec::new();
                    let mut failed = false;
                    for input in &inputs {
                        match ner.extract_single(input, subtype) {
                            Ok(s) => surfaces.extend(s),
                            Err(e) => {
                                warnings.push(format!("sub-type {subtype:?}: {e}"));
                                failed = true;
                                last_err = Some(e);
                                break;
                            }
                        }
                    }
                    if !failed {
                        out.push((subtype.to_string(), surfaces));
                    }
                }
                match last_err {
                    Some(e) if out.is_empty() => Err(e),
                    _ => Ok(out),
                }
            }
        }
    }

    /// Merges per-sub-type surfaces by normalized form, grounds them and
    /// sorts canonically.
    fn merge(&self, doc: &Document, raw: Vec<(String, Vec<String>)>, warnings: &mut Vec<String>) -> Vec<Mention> {
        let norm = &self.config.normalization;
        let mut by_norm: BTreeMap<String, Mention> = BTreeMap::new();
        for (subtype, surfaces) in raw {
            for surface in surfaces {
                let m = match Mention::new(surface.trim(), norm) {
                    Ok(m) => m,
                    Err(e) => {
                        warnings.push(e.to_string());
                        continue;
                    }
                };
                by_norm
                    .entry(m.normalized.clone())
                    .or_insert(m)
                    .origins
                    .insert(subtype.clone());
            }
        }
        by_norm
            .into_values()
            .map(|mut m| {
                m.spans = ground(doc, &m.surface, norm);
                m
            })
            .collect()
    }

    /// One retrieval with the target type itself.
    pub fn run_baseline(&self, doc: &Document, t: &EntityTypeSpec) -> Result<Extraction> {
        let set = SubTypeSet::new(t.name.clone(), SubTypeSource::Custom, vec![t.name.clone()])?;
        self.run_ed(doc, t, &set)
    }

    /// Union of the retrievals for every sub-type in `set`.
    pub fn run_ed(&self, doc: &Document, _t: &EntityTypeSpec, set: &SubTypeSet) -> Result<Extraction> {
        let mut warnings = Vec::new();
        let raw = self.retrieve(doc, set, &mut warnings)?;
        let mentions = self.merge(doc, raw, &mut warnings);
        Ok(Extraction { mentions, warnings })
    }

    /// The configured mode for one unit: filtering modes attach verdicts to
    /// every candidate.
    pub fn run_edf(&self, doc: &Document, t: &EntityTypeSpec) -> Result<Extraction> {
        let mut ex = if self.config.mode.decomposes() {
            let set = self
                .subtypes(&t.name)
                .ok_or_else(|| Error::invalid("pipeline", format!("no sub-types resolved for {:?}", t.name)))?;
            self.run_ed(doc, t, set)?
        } else {
            self.run_baseline(doc, t)?
        };
        if self.config.mode.filters() {
            let cfg = self.config.filter.as_ref().expect("validated");
            let classifier = self.backends.classifier.as_ref().expect("validated");
            filter_set(&mut ex.mentions, t, doc, cfg, classifier.as_ref())?;
        }
        Ok(ex)
    }

    /// Runs one unit, turning errors into a failed prediction.
    pub fn run_unit(&self, doc: &Document, t: &EntityTypeSpec) -> DocPrediction {
        match self.run_edf(doc, t) {
            Ok(ex) => DocPrediction {
                doc_id: doc.id().to_string(),
                entity_type: t.name.clone(),
                status: UnitStatus::Ok,
                error: None,
                candidates: ex.mentions,
                warnings: ex.warnings,
            },
            Err(e) => {
                log::warn!("document {} ({}): {e}", doc.id(), t.name);
                DocPrediction {
                    doc_id: doc.id().to_string(),
                    entity_type: t.name.clone(),
                    status: UnitStatus::Failed,
                    error: Some(e.to_string()),
                    candidates: Vec::new(),
                    warnings: Vec::new(),
                }
            }
        }
    }

    /// Runs every (document, target) unit, optionally persisting to `dir`.
    ///
    /// With a run directory, completed units found there are not re-run and
    /// each finished unit is appended as soon as it completes. When `cancel`
    /// is raised, documents not yet started are skipped, finished work is
    /// checkpointed and [`Error::Interrupted`] is returned.
    pub fn run_corpus(
        &self,
        corpus: &Corpus,
        dir: Option<&Path>,
        cancel: Option<&AtomicBool>,
        progress: Option<Progress<'_>>,
    ) -> Result<RunArtifacts> {
        let writer = match dir {
            Some(d) => Some(RunWriter::open(d, &self.config)?),
            None => None,
        };
        let mut done: HashMap<(String, String), DocPrediction> = HashMap::new();
        if let Some(w) = &writer {
            for p in w.completed() {
                done.insert((p.doc_id.clone(), p.entity_type.to_lowercase()), p.clone());
            }
        }
        let writer = writer.map(Mutex::new);
        let total = corpus.documents.len() * self.targets.len();
        let counter = std::sync::atomic::AtomicUsize::new(done.len());
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(self.config.concurrency)
            .build()
            .map_err(|e| Error::invalid("worker pool", e.to_string()))?;
        let context_mode = self.config.filter.as_ref().map(|f| f.context);

        let fresh: Vec<Result<Vec<DocPrediction>>> = pool.install(|| {
            corpus
                .documents
                .par_iter()
                .map(|doc| {
                    if cancel.is_some_and(|c| c.load(Ordering::SeqCst)) {
                        return Ok(Vec::new());
                    }
                    let mut out = Vec::new();
                    for t in &self.targets {
                        if done.contains_key(&(doc.id().to_string(), t.name.to_lowercase())) {
                            continue;
                        }
                        let p = self.run_unit(doc, t);
                        if let Some(w) = &writer {
                            w.lock().expect("writer lock").append(&p, context_mode)?;
                        }
                        let n = counter.fetch_add(1, Ordering::SeqCst) + 1;
                        if let Some(cb) = progress {
                            cb(n, total);
                        }
                        out.push(p);
                    }
                    Ok(out)
                })
                .collect()
        });

        let mut predictions: Vec<DocPrediction> = done.into_values().collect();
        for r in fresh {
            predictions.extend(r?);
        }
        let target_pos = |name: &str| self.targets.iter().position(|t| t.name.eq_ignore_ascii_case(name));
        predictions.sort_by(|a, b| {
            (a.doc_id.as_str(), target_pos(&a.entity_type)).cmp(&(b.doc_id.as_str(), target_pos(&b.entity_type)))
        });
        let names: Vec<String> = self.targets.iter().map(|t| t.name.clone()).collect();
        let report = score_predictions(corpus, &names, &predictions, &self.config.normalization, |m| m.is_accepted());
        let artifacts = RunArtifacts {
            config: self.config.clone(),
            predictions,
            report,
        };
        let interrupted = cancel.is_some_and(|c| c.load(Ordering::SeqCst)) && artifacts.predictions.len() < total;
        if let Some(w) = writer {
            let w = w.into_inner().expect("writer lock");
            if interrupted {
                w.checkpoint(&artifacts)?;
            } else {
                w.finalize(&artifacts)?;
            }
        }
        if interrupted {
            return Err(Error::Interrupted {
                completed: artifacts.predictions.len(),
                total,
            });
        }
        Ok(artifacts)
    }
}
