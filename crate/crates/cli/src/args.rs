//! Command-line surface and the mapping from flags onto `RunConfig`.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use edf_core::{
    BackendDescriptor, BackendKind, ContextMode, Corpus, FilterConfig, InputUnit, MockPolicy, MockSpec,
    PromptVariant, RunConfig, RunMode, SubTypeSource, TemplateId,
};

use crate::Usage;

#[derive(Debug, Parser)]
#[command(name = "edf", version, about = "Zero-shot clinical NER by entity decomposition and filtering")]
pub struct Cli {
    /// More log output on stderr (-v info, -vv debug). RUST_LOG wins.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Print the sub-type list of a target type.
    Decompose(DecomposeArgs),
    /// Extract mentions from a corpus or a single text, without scoring.
    Extract(ExtractArgs),
    /// Run a pipeline mode over a corpus and score it.
    Run(RunArgs),
    /// Re-score a run directory against gold.
    Evaluate(RunRef),
    /// Gold entities sharing no token with any prediction.
    AnalyzeAbsent(AbsentArgs),
    /// Rejected gold entities grouped by polarity.
    AnalyzePolarity(RunRef),
    /// Re-score stored verdicts over a threshold grid.
    Sweep(SweepArgs),
    /// Write a seeded synthetic corpus as JSONL.
    GenSynthetic(GenArgs),
}

#[derive(Debug, Args)]
pub struct DecomposeArgs {
    #[arg(long)]
    pub target: String,
    /// annotation, llm-generated, umls or custom.
    #[arg(long, value_parser = parse_source)]
    pub source: SubTypeSource,
    /// Sub-type list file for --source custom, one per line.
    #[arg(long)]
    pub custom: Option<PathBuf>,
    /// Append the target itself when the list lacks it.
    #[arg(long)]
    pub include_target: bool,
    /// Ask a completion endpoint instead of the bundled llm-generated list.
    #[arg(long)]
    pub endpoint: Option<String>,
    #[arg(long)]
    pub model: Option<String>,
    /// Write the list as JSON.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExtractArgs {
    #[command(flatten)]
    pub pipeline: PipelineArgs,
    /// Corpus file (.jsonl, or CoNLL/BIO otherwise).
    #[arg(long, conflicts_with = "text", required_unless_present = "text")]
    pub corpus: Option<PathBuf>,
    /// A single note to extract from.
    #[arg(long)]
    pub text: Option<String>,
    /// Predictions as JSONL, one line per (document, target).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub pipeline: PipelineArgs,
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Run directory; an existing one is resumed.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RunRef {
    /// Run directory written by `edf run`.
    #[arg(long)]
    pub run: PathBuf,
    /// Gold corpus; defaults to the copy inside the run directory.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// JSON output file.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AbsentArgs {
    #[command(flatten)]
    pub run: RunRef,
    /// Absent entities listed on stdout; the file has all of them.
    #[arg(long, default_value_t = 20)]
    pub limit: usize,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub run: PathBuf,
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// start:end:step, or a comma list of thresholds.
    #[arg(long, default_value = "0:1:0.1")]
    pub grid: String,
    /// CSV output; defaults to sweep.csv in the run directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    #[arg(long, default_value_t = 100)]
    pub docs: usize,
    /// Gazetteer JSON; the bundled clinical one by default.
    #[arg(long)]
    pub gazetteer: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum MockFilter {
    Oracle,
    Polarity,
    Stochastic,
    InformedStochastic,
    Fixed,
}

impl From<MockFilter> for MockPolicy {
    fn from(m: MockFilter) -> Self {
        match m {
            MockFilter::Oracle => MockPolicy::Oracle,
            MockFilter::Polarity => MockPolicy::Polarity,
            MockFilter::Stochastic => MockPolicy::Stochastic,
            MockFilter::InformedStochastic => MockPolicy::InformedStochastic,
            MockFilter::Fixed => MockPolicy::Fixed,
        }
    }
}

/// Flags shared by `run` and `extract`. Each one overrides a single field
/// of the TOML config.
#[derive(Debug, Args)]
pub struct PipelineArgs {
    /// TOML file mirroring the run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// baseline, ed, f or edf.
    #[arg(long, value_parser = parse_mode)]
    pub mode: Option<RunMode>,
    /// Target types; defaults to the corpus catalog.
    #[arg(long = "target", value_delimiter = ',')]
    pub targets: Vec<String>,
    /// Sub-type source for ed/edf; annotation when unset.
    #[arg(long, value_parser = parse_source)]
    pub decomposer: Option<SubTypeSource>,
    /// TARGET=FILE custom sub-type list.
    #[arg(long = "custom", value_parser = parse_custom)]
    pub custom: Vec<(String, PathBuf)>,
    /// Keep sub-type lists exactly as registered.
    #[arg(long)]
    pub no_include_target: bool,
    #[arg(long, value_parser = parse_unit)]
    pub input_unit: Option<InputUnit>,
    #[arg(long)]
    pub concurrency: Option<usize>,
    #[arg(long)]
    pub timeout_ms: Option<u64>,

    #[arg(long, conflicts_with = "mock_ner")]
    pub ner_endpoint: Option<String>,
    #[arg(long)]
    pub ner_model: Option<String>,
    /// single_type or multi_type.
    #[arg(long, value_parser = parse_kind)]
    pub ner_kind: Option<BackendKind>,
    /// Gazetteer-driven NER mock.
    #[arg(long)]
    pub mock_ner: bool,
    /// Share of the mock's sub-type answers drawn from off-target surfaces.
    #[arg(long)]
    pub contamination: Option<f64>,
    #[arg(long)]
    pub gazetteer: Option<PathBuf>,
    /// Seed of the mock backends.
    #[arg(long)]
    pub seed: Option<u64>,

    #[arg(long, conflicts_with = "mock_filter")]
    pub filter_endpoint: Option<String>,
    #[arg(long)]
    pub filter_model: Option<String>,
    /// asclepius, llama2 or raw.
    #[arg(long, value_parser = parse_template)]
    pub filter_template: Option<TemplateId>,
    #[arg(long, value_enum)]
    pub mock_filter: Option<MockFilter>,
    #[arg(long, value_parser = parse_context)]
    pub filter_context: Option<ContextMode>,
    #[arg(long, value_parser = parse_prompt)]
    pub filter_prompt: Option<PromptVariant>,
    /// Reject a mention when the answer is No with p_no >= tau.
    #[arg(long)]
    pub threshold: Option<f64>,
}

fn parse_mode(s: &str) -> Result<RunMode, String> {
    s.parse().map_err(|e: edf_core::Error| e.to_string())
}

fn parse_source(s: &str) -> Result<SubTypeSource, String> {
    s.parse().map_err(|e: edf_core::Error| e.to_string())
}

fn parse_unit(s: &str) -> Result<InputUnit, String> {
    s.parse().map_err(|e: edf_core::Error| e.to_string())
}

fn parse_kind(s: &str) -> Result<BackendKind, String> {
    s.parse().map_err(|e: edf_core::Error| e.to_string())
}

fn parse_template(s: &str) -> Result<TemplateId, String> {
    s.parse().map_err(|e: edf_core::Error| e.to_string())
}

fn parse_context(s: &str) -> Result<ContextMode, String> {
    s.parse().map_err(|e: edf_core::Error| e.to_string())
}

fn parse_prompt(s: &str) -> Result<PromptVariant, String> {
    s.parse().map_err(|e: edf_core::Error| e.to_string())
}

fn parse_custom(s: &str) -> Result<(String, PathBuf), String> {
    let (t, p) = s.split_once('=').ok_or("expected TARGET=FILE")?;
    Ok((t.trim().to_string(), PathBuf::from(p)))
}

impl PipelineArgs {
    /// File, then environment, then flags. `corpus` supplies default targets.
    pub fn resolve(&self, corpus: Option<&Corpus>, env: impl Fn(&str) -> Option<String>) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path).map_err(|e| Usage(e.to_string()))?,
            None => {
                let mode = self
                    .mode
                    .ok_or_else(|| Usage("missing field `mode`: pass --mode or a --config file".into()))?;
                RunConfig::new(mode, Vec::new(), BackendDescriptor::new(BackendKind::SingleType))
            }
        };
        if let Some(m) = self.mode {
            cfg.mode = m;
        }

        if cfg.filter.is_none() && cfg.mode.filters() && env("EDF_FILTER_ENDPOINT").is_some() {
            cfg.filter = Some(FilterConfig::new(BackendDescriptor::new(BackendKind::Classifier)));
        }
        cfg.apply_env(&env)?;

        if !self.targets.is_empty() {
            cfg.targets = self.targets.iter().map(|t| t.trim().to_string()).collect();
        }
        if cfg.targets.is_empty() {
            if let Some(c) = corpus {
                cfg.targets = c.types.iter().map(|t| t.name.clone()).collect();
            }
        }
        if let Some(d) = self.decomposer {
            cfg.decomposer = Some(d);
        }
        if cfg.mode.decomposes() && cfg.decomposer.is_none() {
            log::info!("no decomposer given, using annotation");
            cfg.decomposer = Some(SubTypeSource::Annotation);
        }
        for (t, p) in &self.custom {
            cfg.custom_subtypes.insert(t.clone(), p.clone());
        }
        if self.no_include_target {
            cfg.include_target = false;
        }
        if let Some(u) = self.input_unit {
            cfg.input_unit = u;
        }
        if let Some(n) = self.concurrency {
            cfg.concurrency = n;
        }

        self.apply_ner(&mut cfg.ner);
        self.apply_filter(&mut cfg);
        if let Some(ms) = self.timeout_ms {
            cfg.ner.timeout_ms = ms;
            if let Some(f) = &mut cfg.filter {
                f.backend.timeout_ms = ms;
            }
            if let Some(d) = &mut cfg.decomposer_backend {
                d.timeout_ms = ms;
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn apply_ner(&self, ner: &mut BackendDescriptor) {
        if self.mock_ner {
            ner.kind = BackendKind::Mock;
            ner.endpoint = None;
        }
        if let Some(url) = &self.ner_endpoint {
            if ner.kind == BackendKind::Mock {
                ner.kind = BackendKind::SingleType;
            }
            ner.endpoint = Some(url.clone());
        }
        if let Some(k) = self.ner_kind {
            ner.kind = k;
        }
        if self.ner_model.is_some() {
            ner.model = self.ner_model.clone();
        }
        if ner.kind == BackendKind::Mock {
            let spec = ner.mock.get_or_insert_with(MockSpec::default);
            if let Some(r) = self.contamination {
                spec.contamination_rate = r;
            }
            if let Some(s) = self.seed {
                spec.seed = s;
            }
            if self.gazetteer.is_some() {
                spec.gazetteer = self.gazetteer.clone();
            }
        }
    }

    fn apply_filter(&self, cfg: &mut RunConfig) {
        if let Some(policy) = self.mock_filter {
            let mut backend = BackendDescriptor::new(BackendKind::Mock);
            backend.mock = Some(MockSpec {
                policy: policy.into(),
                seed: self.seed.unwrap_or(0),
                ..MockSpec::default()
            });
            match &mut cfg.filter {
                Some(f) => f.backend = backend,
                None => cfg.filter = Some(FilterConfig::new(backend)),
            }
        }
        if let Some(url) = &self.filter_endpoint {
            let f = cfg
                .filter
                .get_or_insert_with(|| FilterConfig::new(BackendDescriptor::new(BackendKind::Classifier)));
            if f.backend.kind == BackendKind::Mock {
                f.backend = BackendDescriptor::new(BackendKind::Classifier);
            }
            f.backend.endpoint = Some(url.clone());
        }
        let touched = self.filter_model.is_some()
            || self.filter_template.is_some()
            || self.filter_context.is_some()
            || self.filter_prompt.is_some()
            || self.threshold.is_some();
        let Some(f) = &mut cfg.filter else {
            if touched && !cfg.mode.filters() {
                log::warn!("filter flags ignored: mode {} does not filter", cfg.mode);
            }
            return;
        };
        if let (BackendKind::Mock, Some(s)) = (f.backend.kind, self.seed) {
            f.backend.mock.get_or_insert_with(MockSpec::default).seed = s;
        }
        if self.filter_model.is_some() {
            f.backend.model = self.filter_model.clone();
        }
        if let Some(t) = self.filter_template {
            f.backend.template = Some(t);
        }
        if let Some(c) = self.filter_context {
            f.context = c;
        }
        if let Some(p) = self.filter_prompt {
            f.prompt = p;
        }
        if let Some(t) = self.threshold {
            f.threshold = t;
        }
    }
}

/// Corpus by extension: `.jsonl`/`.json`, otherwise CoNLL/BIO.
pub fn load_corpus(path: &Path) -> Result<Corpus> {
    let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("");
    if matches!(ext, "jsonl" | "json") {
        return edf_core::corpus::load_jsonl(path).with_context(|| format!("loading corpus {}", path.display()));
    }
    let loaded = edf_core::corpus::load_bio(path).with_context(|| format!("loading corpus {}", path.display()))?;
    for w in &loaded.warnings {
        log::warn!("{}: {w}", path.display());
    }
    Ok(loaded.corpus)
}
