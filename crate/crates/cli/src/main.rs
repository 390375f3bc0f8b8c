mod args;
mod table;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicBool, Ordering};

use anyhow::{bail, Context, Result};
use clap::Parser;

use edf_core::backend::HttpBackend;
use edf_core::corpus::{generate_synthetic, write_jsonl};
use edf_core::decomposer::{decompose_llm, ensure_target_included};
use edf_core::eval::{absence_over_run, parse_grid, polarity_breakdown, score_predictions, sweep_threshold, write_sweep_csv};
use edf_core::{
    load_run, BackendDescriptor, BackendKind, Backends, Corpus, DecomposerRegistry, Document, EntityTypeSpec,
    Gazetteer, Pipeline, RunArtifacts, SubTypeSource,
};

use args::{AbsentArgs, Cli, Command, DecomposeArgs, ExtractArgs, GenArgs, RunArgs, RunRef, SweepArgs};
use table::Table;

/// Bad invocation; exits 1.
#[derive(Debug)]
pub struct Usage(pub String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

/// Copy of the scored corpus kept in each run directory.
const CORPUS_COPY: &str = "corpus.jsonl";

static INTERRUPTED: AtomicBool = AtomicBool::new(false);

extern "C" fn on_sigint(_: libc::c_int) {
    // a second Ctrl-C gives up on the checkpoint
    if INTERRUPTED.swap(true, Ordering::SeqCst) {
        unsafe { libc::_exit(130) };
    }
}

fn install_sigint() {
    let handler: extern "C" fn(libc::c_int) = on_sigint;
    unsafe {
        libc::signal(libc::SIGINT, handler as libc::sighandler_t);
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &anyhow::Error) -> u8 {
    use edf_core::Error as E;
    if e.downcast_ref::<Usage>().is_some() {
        return 1;
    }
    match e.downcast_ref::<E>() {
        Some(
            E::Config(_)
            | E::Invalid { .. }
            | E::UnknownDecomposition { .. }
            | E::UnknownTemplate(_)
            | E::MissingSlot { .. },
        ) => 1,
        _ => 2,
    }
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Decompose(a) => decompose(a),
        Command::Extract(a) => extract(a),
        Command::Run(a) => run(a),
        Command::Evaluate(a) => evaluate(a),
        Command::AnalyzeAbsent(a) => analyze_absent(a),
        Command::AnalyzePolarity(a) => analyze_polarity(a),
        Command::Sweep(a) => sweep(a),
        Command::GenSynthetic(a) => gen_synthetic(a),
    }
}

fn env_var(name: &str) -> Option<String> {
    std::env::var(name).ok().filter(|v| !v.is_empty())
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    let mut out = BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
    serde_json::to_writer_pretty(&mut out, value)?;
    out.write_all(b"\n")?;
    out.flush()?;
    Ok(())
}

fn decompose(a: DecomposeArgs) -> Result<()> {
    let target = EntityTypeSpec::known(a.target.trim())?;
    let set = match (a.source, &a.endpoint) {
        (SubTypeSource::LlmGenerated, Some(url)) => {
            let mut desc = BackendDescriptor::new(BackendKind::SingleType).with_endpoint(url.clone());
            desc.model = a.model.clone();
            if let Some(ms) = env_var("EDF_TIMEOUT_MS") {
                desc.timeout_ms = ms
                    .parse()
                    .map_err(|_| Usage(format!("EDF_TIMEOUT_MS: {ms:?} is not a number of milliseconds")))?;
            }
            let backend = HttpBackend::new(desc.clone())?;
            decompose_llm(&target, &backend, &desc.decoding)?
        }
        (_, Some(_)) => bail!(Usage("--endpoint only applies to --source llm-generated".into())),
        (source, None) => {
            let mut registry = DecomposerRegistry::builtin();
            match (&a.custom, source) {
                (Some(path), SubTypeSource::Custom) => registry.load_custom(&target.name, path)?,
                (None, SubTypeSource::Custom) => bail!(Usage("missing field `custom`: --source custom needs --custom FILE".into())),
                (Some(_), _) => bail!(Usage("--custom only applies to --source custom".into())),
                (None, _) => {}
            }
            registry.decompose(&target, source)?
        }
    };
    let set = if a.include_target { ensure_target_included(set) } else { set };
    for s in set.iter() {
        println!("{s}");
    }
    if let Some(out) = &a.out {
        write_json(out, &set)?;
    }
    Ok(())
}

fn gen_synthetic(a: GenArgs) -> Result<()> {
    let gazetteer = match &a.gazetteer {
        Some(p) => Gazetteer::load(p)?,
        None => Gazetteer::clinical_demo(),
    };
    let corpus = generate_synthetic(a.seed, a.docs, &gazetteer)?;
    write_jsonl(&corpus, &a.out)?;
    let mut t = Table::new(&["type", "gold", "negated"]);
    for ty in &corpus.types {
        let golds = corpus.gold.values().flatten().filter(|g| g.entity_type.eq_ignore_ascii_case(&ty.name));
        let (n, neg) = golds.fold((0, 0), |(n, neg), g| {
            (n + 1, neg + usize::from(g.polarity == edf_core::Polarity::Negative))
        });
        t.row(vec![ty.name.clone(), n.to_string(), neg.to_string()]);
    }
    println!("{} documents written to {}", corpus.documents.len(), a.out.display());
    print!("{t}");
    Ok(())
}

fn extract(a: ExtractArgs) -> Result<()> {
    let corpus = match (&a.corpus, &a.text) {
        (Some(p), _) => args::load_corpus(p)?,
        (None, Some(text)) => Corpus::new(vec![Document::new("text", text.clone())], Default::default(), Vec::new())?,
        (None, None) => bail!(Usage("pass --corpus or --text".into())),
    };
    let cfg = a.pipeline.resolve(Some(&corpus), env_var)?;
    let backends = Backends::from_config(&cfg, Some(&corpus))?;
    let pipeline = Pipeline::new(cfg, backends)?;
    let run = pipeline.run_corpus(&corpus, None, None, None)?;

    let mut t = Table::new(&["doc", "type", "mention", "p_no", "kept"]);
    for p in &run.predictions {
        if let Some(err) = &p.error {
            t.row(vec![p.doc_id.clone(), p.entity_type.clone(), format!("<failed: {err}>"), String::new(), String::new()]);
        }
        for m in &p.candidates {
            let p_no = m.verdict.map(|v| v.p_no.to_string()).unwrap_or_default();
            let kept = if m.is_accepted() { "yes" } else { "no" };
            t.row(vec![p.doc_id.clone(), p.entity_type.clone(), m.surface.clone(), p_no, kept.into()]);
        }
    }
    print!("{t}");
    if let Some(out) = &a.out {
        let mut w = BufWriter::new(File::create(out).with_context(|| format!("creating {}", out.display()))?);
        for p in &run.predictions {
            serde_json::to_writer(&mut w, p)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
    }
    Ok(())
}

fn run(a: RunArgs) -> Result<()> {
    let corpus = match &a.corpus {
        Some(p) => Some(args::load_corpus(p)?),
        None => None,
    };
    let cfg = a.pipeline.resolve(corpus.as_ref(), env_var)?;
    let Some(corpus) = corpus else {
        bail!(Usage("missing field `corpus`: pass --corpus PATH".into()));
    };
    let Some(dir) = &a.out else {
        bail!(Usage("missing field `out`: pass --out DIR".into()));
    };
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let copy = dir.join(CORPUS_COPY);
    if copy.exists() {
        let previous = edf_core::corpus::load_jsonl(&copy)?;
        if previous.documents != corpus.documents || previous.gold != corpus.gold {
            bail!(edf_core::Error::RunDir {
                dir: dir.clone(),
                message: "holds a run over a different corpus".into(),
            });
        }
    } else {
        write_jsonl(&corpus, &copy)?;
    }

    let backends = Backends::from_config(&cfg, Some(&corpus))?;
    let pipeline = Pipeline::new(cfg, backends)?;
    install_sigint();
    let step = (corpus.documents.len() * pipeline.targets().len() / 10).max(1);
    let progress = move |done: usize, total: usize| {
        if done % step == 0 || done == total {
            log::info!("{done}/{total} units");
        }
    };
    let run = pipeline.run_corpus(&corpus, Some(dir), Some(&INTERRUPTED), Some(&progress))?;
    print_run(&run, dir);
    Ok(())
}

fn print_run(run: &RunArtifacts, dir: &Path) {
    println!("mode {} over {} units", run.config.mode, run.predictions.len());
    print!("{}", table::report(&run.report));
    if !run.report.failures.is_empty() {
        println!("{} failed units, scored as empty; rerun to retry", run.report.failures.len());
    }
    println!("run directory: {}", dir.display());
}

/// Run plus the gold corpus it is scored against.
fn open_run(r: &Path, corpus: Option<&PathBuf>) -> Result<(RunArtifacts, Corpus)> {
    let run = load_run(r)?;
    let corpus = match corpus {
        Some(p) => args::load_corpus(p)?,
        None => {
            let copy = r.join(CORPUS_COPY);
            if !copy.exists() {
                bail!(Usage(format!("{} has no {CORPUS_COPY}; pass --corpus", r.display())));
            }
            edf_core::corpus::load_jsonl(copy)?
        }
    };
    Ok((run, corpus))
}

fn evaluate(a: RunRef) -> Result<()> {
    let (run, corpus) = open_run(&a.run, a.corpus.as_ref())?;
    let report = score_predictions(
        &corpus,
        &run.target_names(),
        &run.predictions,
        &run.config.normalization,
        |m| m.is_accepted(),
    );
    print!("{}", table::report(&report));
    if report.unprocessed > 0 {
        println!("{} units missing from the run, scored as empty", report.unprocessed);
    }
    if let Some(out) = &a.out {
        write_json(out, &report)?;
    }
    Ok(())
}

fn analyze_absent(a: AbsentArgs) -> Result<()> {
    let (run, corpus) = open_run(&a.run.run, a.run.corpus.as_ref())?;
    let r = absence_over_run(&corpus, &run.target_names(), &run.predictions, &run.config.normalization);
    println!("gold {}  fully absent {}  ratio {}", r.n_gold, r.n_fully_absent, r.ratio);
    if !r.absent.is_empty() && a.limit > 0 {
        let mut t = Table::new(&["doc", "type", "surface"]);
        for e in r.absent.iter().take(a.limit) {
            t.row(vec![e.doc_id.clone(), e.entity_type.clone(), e.surface.clone()]);
        }
        print!("{t}");
        if r.absent.len() > a.limit {
            println!("... {} more", r.absent.len() - a.limit);
        }
    }
    if let Some(out) = &a.run.out {
        write_json(out, &r)?;
    }
    Ok(())
}

fn analyze_polarity(a: RunRef) -> Result<()> {
    let (run, corpus) = open_run(&a.run, a.corpus.as_ref())?;
    let r = polarity_breakdown(
        &corpus,
        run.config.mode,
        &run.target_names(),
        &run.predictions,
        &run.config.normalization,
    )?;
    let mut t = Table::new(&["polarity", "rejected", "matched"]);
    t.row(vec!["positive".into(), r.positive.to_string(), r.matched_positive.to_string()]);
    t.row(vec!["negative".into(), r.negative.to_string(), r.matched_negative.to_string()]);
    t.row(vec!["unspecified".into(), r.unspecified.to_string(), r.matched_unspecified.to_string()]);
    t.row(vec![
        "total".into(),
        r.total.to_string(),
        (r.matched_positive + r.matched_negative + r.matched_unspecified).to_string(),
    ]);
    print!("{t}");
    if let Some(out) = &a.out {
        write_json(out, &r)?;
    }
    Ok(())
}

fn sweep(a: SweepArgs) -> Result<()> {
    let grid = parse_grid(&a.grid)?;
    let (run, corpus) = open_run(&a.run, a.corpus.as_ref())?;
    let rows = sweep_threshold(
        &corpus,
        run.config.mode,
        &run.target_names(),
        &run.predictions,
        &run.config.normalization,
        &grid,
    )?;
    let mut t = Table::new(&["tau", "precision", "recall", "f1"]);
    for r in &rows {
        t.row(vec![r.tau.to_string(), r.precision.to_string(), r.recall.to_string(), r.f1.to_string()]);
    }
    print!("{t}");
    let out = a.out.clone().unwrap_or_else(|| a.run.join("sweep.csv"));
    let file = File::create(&out).with_context(|| format!("creating {}", out.display()))?;
    let mut w = BufWriter::new(file);
    write_sweep_csv(&rows, &mut w)?;
    w.flush()?;
    println!("written to {}", out.display());
    Ok(())
}
