//! Acceptance suite. Runs without the libtest harness so that every
//! criterion prints exactly one PASS/FAIL line.

mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use edf_core::backend::mock::{CannedCompletion, ClassifierPolicy, GazetteerNer, MockClassifier};
use edf_core::backend::{parse_bio, render_bio, PromptedNer};
use edf_core::bio::Tag;
use edf_core::decomposer::decompose_llm;
use edf_core::eval::{is_fully_absent, parse_grid, polarity_breakdown, sweep_threshold};
use edf_core::filter::{apply_threshold, filter_question, render_filter_prompt};
use edf_core::{
    exact_match, BackendDescriptor, BackendKind, Backends, ContextMode, ContextWindow, Decoding, DecomposerRegistry,
    EntityTypeSpec, Error, Gazetteer, MockPolicy, NerBackend, NormalizationConfig, Pipeline, Polarity, PromptVariant,
    RunMode, SubTypeSource, TemplateId,
};

use common::*;

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn golden(name: &str) -> String {
    let p = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name);
    std::fs::read_to_string(&p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

fn within(start: Instant, limit: Duration) -> Result<Duration, String> {
    let took = start.elapsed();
    if took > limit {
        Err(format!("took {took:?}, limit {limit:?}"))
    } else {
        Ok(took)
    }
}

const SAMPLE: &str = "Patient was started on aspirin 81 mg daily.";

fn templates_and_registries() -> Outcome {
    let start = Instant::now();
    let mut checked = 0;
    let mut same = |name: &str, got: &str| -> Result<(), String> {
        checked += 1;
        let want = golden(name);
        if got == want {
            Ok(())
        } else {
            Err(format!("{name} differs:\n--- got\n{got}\n--- want\n{want}"))
        }
    };

    let canned = Arc::new(CannedCompletion::new("[]"));
    let uniner = PromptedNer::new(canned.clone(), BackendDescriptor::new(BackendKind::SingleType));
    uniner.extract_single(SAMPLE, "medication").map_err(|e| e.to_string())?;
    same("uniner_medication.txt", &canned.prompts()[0])?;

    let canned = Arc::new(CannedCompletion::new("aspirin(B-medication)"));
    let gner = PromptedNer::new(
        canned.clone(),
        BackendDescriptor::new(BackendKind::SingleType).with_template(TemplateId::Gner),
    );
    let got = gner.extract_single(SAMPLE, "medication").map_err(|e| e.to_string())?;
    ensure!(got == ["aspirin"], "gner parse gave {got:?}");
    same("gner_medication.txt", &canned.prompts()[0])?;

    let treatment = EntityTypeSpec::known("treatment").unwrap();
    let problem = EntityTypeSpec::known("problem").unwrap();
    let ctx = ContextWindow {
        mode: ContextMode::Sentence,
        text: SAMPLE.to_string(),
        ungrounded: false,
    };
    let render = |w| render_filter_prompt("aspirin", &treatment, PromptVariant::Default, &ctx, w).unwrap();
    same("asclepius_filter_default.txt", &render(TemplateId::Asclepius))?;
    same("llama2_filter_default.txt", &render(TemplateId::Llama2))?;
    let q = |e, t, v| filter_question(e, t, v).unwrap();
    same(
        "filter_described_treatment.txt",
        &q("aspirin", &treatment, PromptVariant::Described),
    )?;
    same(
        "filter_described_problem.txt",
        &q("chest pain", &problem, PromptVariant::Described),
    )?;
    same("filter_default_problem.txt", &q("chest pain", &problem, PromptVariant::Default))?;

    let canned = CannedCompletion::new("- medication\n- therapy");
    decompose_llm(&treatment, &canned, &Decoding::GREEDY).map_err(|e| e.to_string())?;
    same("decompose_treatment.txt", &canned.prompts()[0])?;

    let expected: BTreeMap<String, BTreeMap<String, Vec<String>>> =
        serde_json::from_str(&golden("registries.json")).unwrap();
    let registry = DecomposerRegistry::builtin();
    let mut lists = 0;
    for (source, targets) in &expected {
        let source: SubTypeSource = serde_json::from_value(serde_json::Value::String(source.clone())).unwrap();
        for (target, want) in targets {
            let got = registry
                .get(source, target)
                .ok_or_else(|| format!("registry lacks {source:?}/{target}"))?;
            ensure!(got == want.as_slice(), "{source:?}/{target}: {got:?} != {want:?}");
            lists += 1;
        }
    }
    let n_builtin = registry.entries().count();
    ensure!(n_builtin == lists, "registry has {n_builtin} lists, expected {lists}");
    ensure!(
        registry.get(SubTypeSource::Annotation, "treatment").map(<[String]>::len) == Some(8),
        "annotation treatment list should have 8 items"
    );
    let took = within(start, Duration::from_secs(1))?;
    Ok(format!("{checked} golden prompts, {lists} registry lists, {took:?}"))
}

/// Maximum bipartite matching on equality edges (Kuhn's augmenting paths).
fn max_matching(preds: &[String], golds: &[String]) -> usize {
    fn augment(p: usize, adj: &[Vec<usize>], seen: &mut [bool], owner: &mut [Option<usize>]) -> bool {
        for &g in &adj[p] {
            if seen[g] {
                continue;
            }
            seen[g] = true;
            if owner[g].is_none_or(|q| augment(q, adj, seen, owner)) {
                owner[g] = Some(p);
                return true;
            }
        }
        false
    }
    let key = |s: &str| s.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase();
    let adj: Vec<Vec<usize>> = preds
        .iter()
        .map(|p| (0..golds.len()).filter(|&g| key(p) == key(&golds[g])).collect())
        .collect();
    let mut owner = vec![None; golds.len()];
    (0..preds.len())
        .filter(|&p| augment(p, &adj, &mut vec![false; golds.len()], &mut owner))
        .count()
}

const ALPHABET: [&str; 5] = ["aspirin", "chest pain", "ct scan", "his aspirin", "cva"];

fn variant(rng: &mut ChaCha8Rng, s: &str) -> String {
    match rng.gen_range(0..4) {
        0 => s.to_string(),
        1 => s.to_uppercase(),
        2 => format!("  {} ", s.replace(' ', "   ")),
        _ => {
            let mut c = s.chars();
            c.next().map(|f| f.to_uppercase().chain(c).collect()).unwrap_or_default()
        }
    }
}

fn random_bag(rng: &mut ChaCha8Rng) -> Vec<String> {
    let n = rng.gen_range(0..=10);
    (0..n)
        .map(|_| {
            let s = ALPHABET.choose(rng).unwrap();
            variant(rng, s)
        })
        .collect()
}

fn metric_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let cfg = NormalizationConfig::default();
    for trial in 0..1000 {
        let preds = random_bag(&mut rng);
        let golds = random_bag(&mut rng);
        let c = exact_match(preds.iter().map(String::as_str), golds.iter().map(String::as_str), &cfg);
        let m = max_matching(&preds, &golds);
        ensure!(
            (c.tp, c.fp, c.fn_) == (m, preds.len() - m, golds.len() - m),
            "trial {trial}: {c:?} vs oracle matching {m} for {preds:?} / {golds:?}"
        );
    }
    let took = within(start, Duration::from_secs(5))?;
    Ok(format!("1000 instances agree, {took:?}"))
}

fn bio_round_trip() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let words = ["patient", "was", "given", "aspirin", "for", "chest", "pain", "CT", "x-ray", "81mg", "Na+", "ß-blocker"];
    let types = ["medication", "problem", "test", "medical device"];
    for case in 0..500 {
        let mut tokens: Vec<(String, Tag)> = Vec::new();
        let mut want: Vec<(String, String)> = Vec::new();
        for _ in 0..rng.gen_range(0..8) {
            for _ in 0..rng.gen_range(0..3) {
                tokens.push((words.choose(&mut rng).unwrap().to_string(), Tag::Outside));
            }
            let t = types.choose(&mut rng).unwrap().to_string();
            let len = rng.gen_range(1..=3);
            let span: Vec<String> = (0..len).map(|_| words.choose(&mut rng).unwrap().to_string()).collect();
            for (i, w) in span.iter().enumerate() {
                let tag = if i == 0 { Tag::Begin(t.clone()) } else { Tag::Inside(t.clone()) };
                tokens.push((w.clone(), tag));
            }
            want.push((span.join(" "), t));
        }
        let text = render_bio(&tokens);
        let got = parse_bio(&text).map_err(|e| format!("case {case}: {e} in {text:?}"))?;
        ensure!(got.entities == want, "case {case}: {:?} != {want:?} from {text:?}", got.entities);
        ensure!(got.warnings.is_empty(), "case {case}: warnings {:?}", got.warnings);
    }
    Ok("500 layouts recovered".into())
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12
}

fn threshold_identities() -> Outcome {
    let corpus = corpus(41, 100);
    let ed = run(&config(RunMode::Ed, 0.3, None), &corpus);
    let filter = mock_filter(MockPolicy::Stochastic, 11, ContextMode::Sentence);
    let edf = run(&config(RunMode::Edf, 0.3, Some(filter)), &corpus);
    let rows = sweep_threshold(
        &corpus,
        RunMode::Edf,
        &targets(),
        &edf.predictions,
        &NormalizationConfig::default(),
        &[0.0, 1.0],
    )
    .map_err(|e| e.to_string())?;
    let (r0, r1) = (&rows[0], &rows[1]);
    let (e, f) = (&ed.report, &edf.report);
    ensure!(
        close(r1.precision, e.precision) && close(r1.recall, e.recall) && close(r1.f1, e.f1),
        "tau=1 row {r1:?} differs from ED P={} R={} F1={}",
        e.precision,
        e.recall,
        e.f1
    );
    ensure!(
        close(r0.precision, f.precision) && close(r0.recall, f.recall) && close(r0.f1, f.f1),
        "tau=0 row {r0:?} differs from EDF P={} R={} F1={}",
        f.precision,
        f.recall,
        f.f1
    );
    ensure!(f.fp < e.fp && f.tp < e.tp, "stochastic filter should remove both kinds of mention");
    Ok(format!(
        "tau=1 F1 {:.4} = ED, tau=0 F1 {:.4} = EDF",
        r1.f1, r0.f1
    ))
}

fn threshold_monotonicity() -> Outcome {
    let corpus = corpus(42, 100);
    let filter = mock_filter(MockPolicy::Stochastic, 12, ContextMode::None);
    let edf = run(&config(RunMode::Edf, 0.3, Some(filter)), &corpus);
    let grid = parse_grid("0:1:0.1").map_err(|e| e.to_string())?;
    ensure!(grid.len() == 11, "grid has {} points", grid.len());
    let norm = NormalizationConfig::default();
    let rows = sweep_threshold(&corpus, RunMode::Edf, &targets(), &edf.predictions, &norm, &grid)
        .map_err(|e| e.to_string())?;
    let accepted_at = |tau: f64| {
        unit_sets(&edf.predictions, |m| {
            let v = m.verdict.unwrap();
            apply_threshold(v.answer, v.p_no, tau).unwrap()
        })
    };
    let mut prev = accepted_at(grid[0]);
    for w in rows.windows(2) {
        ensure!(w[0].recall <= w[1].recall, "recall drops from tau {} to {}", w[0].tau, w[1].tau);
        ensure!(w[0].fp <= w[1].fp, "fp drops from tau {} to {}", w[0].tau, w[1].tau);
        let next = accepted_at(w[1].tau);
        ensure!(subset(&prev, &next), "accepted set shrinks from tau {} to {}", w[0].tau, w[1].tau);
        prev = next;
    }
    ensure!(rows[0].recall < rows[10].recall, "sweep is flat; the mock filter rejected nothing");
    Ok(format!(
        "recall {:.4} -> {:.4} over 11 thresholds",
        rows[0].recall, rows[10].recall
    ))
}

fn ed_recall_dominance() -> Outcome {
    let start = Instant::now();
    let corpus = corpus(43, 100);
    let b = run(&config(RunMode::Baseline, 0.0, None), &corpus);
    let ed = run(&config(RunMode::Ed, 0.0, None), &corpus);
    ensure!(
        ed.report.recall >= b.report.recall,
        "recall(ED) {} < recall(B) {}",
        ed.report.recall,
        b.report.recall
    );
    let all = |_: &edf_core::Mention| true;
    ensure!(
        subset(&unit_sets(&b.predictions, all), &unit_sets(&ed.predictions, all)),
        "a baseline mention is missing from ED"
    );
    let bc = run(&config(RunMode::Baseline, 0.5, None), &corpus);
    let edc = run(&config(RunMode::Ed, 0.5, None), &corpus);
    ensure!(
        edc.report.precision <= bc.report.precision,
        "precision(ED) {} > precision(B) {} under contamination",
        edc.report.precision,
        bc.report.precision
    );
    let took = within(start, Duration::from_secs(10))?;
    Ok(format!(
        "R(B)={:.4} R(ED)={:.4}; contaminated P(B)={:.4} P(ED)={:.4}; {took:?}",
        b.report.recall, ed.report.recall, bc.report.precision, edc.report.precision
    ))
}

fn filter_subset_and_oracle() -> Outcome {
    let corpus = corpus(44, 100);
    let ed = run(&config(RunMode::Ed, 0.3, None), &corpus);
    let b = run(&config(RunMode::Baseline, 0.3, None), &corpus);
    let all = |_: &edf_core::Mention| true;
    let accepted = |m: &edf_core::Mention| m.is_accepted();
    for policy in [MockPolicy::Oracle, MockPolicy::Stochastic, MockPolicy::Polarity] {
        let f = mock_filter(policy, 5, ContextMode::Sentence);
        let edf = run(&config(RunMode::Edf, 0.3, Some(f.clone())), &corpus);
        let fo = run(&config(RunMode::F, 0.3, Some(f)), &corpus);
        ensure!(
            subset(&unit_sets(&edf.predictions, accepted), &unit_sets(&ed.predictions, all)),
            "{policy:?}: EDF output not within ED output"
        );
        ensure!(
            subset(&unit_sets(&fo.predictions, accepted), &unit_sets(&b.predictions, all)),
            "{policy:?}: F output not within baseline output"
        );
    }
    let oracle = mock_filter(MockPolicy::Oracle, 0, ContextMode::None);
    let edf = run(&config(RunMode::Edf, 0.3, Some(oracle.clone())), &corpus);
    let fo = run(&config(RunMode::F, 0.3, Some(oracle)), &corpus);
    ensure!(edf.report.tp > 0, "oracle EDF found nothing");
    ensure!(edf.report.precision == 1.0, "oracle EDF precision {}", edf.report.precision);
    let best = ed.report.f1.max(fo.report.f1);
    ensure!(
        edf.report.f1 >= best,
        "F1(EDF) {} < max(F1(ED) {}, F1(F) {})",
        edf.report.f1,
        ed.report.f1,
        fo.report.f1
    );
    Ok(format!(
        "oracle EDF P=1 F1={:.4} vs ED {:.4}, F {:.4}",
        edf.report.f1, ed.report.f1, fo.report.f1
    ))
}

fn fully_absent_fidelity() -> Outcome {
    let cfg = NormalizationConfig::default();
    ensure!(!is_fully_absent("his aspirin", &["aspirin"], &cfg), "\"his aspirin\" vs \"aspirin\"");
    ensure!(is_fully_absent("CVA", &["stroke", "cerebrovascular"], &cfg), "\"CVA\" should be absent");
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut matched = 0;
    for trial in 0..1000 {
        let preds = random_bag(&mut rng);
        let golds = random_bag(&mut rng);
        let refs: Vec<&str> = preds.iter().map(String::as_str).collect();
        let tp = exact_match(refs.iter().copied(), golds.iter().map(String::as_str), &cfg).tp;
        // a gold is counted as tp iff some prediction equals it after
        // normalization, up to multiplicity; every such gold qualifies
        let norm_preds: BTreeSet<String> = refs.iter().map(|p| edf_core::normalize(p, &cfg)).collect();
        let hit: Vec<&String> = golds
            .iter()
            .filter(|g| norm_preds.contains(&edf_core::normalize(g, &cfg)))
            .collect();
        ensure!(tp <= hit.len(), "trial {trial}: tp {tp} exceeds matchable golds");
        for g in hit {
            ensure!(!is_fully_absent(g, &refs, &cfg), "trial {trial}: matched gold {g:?} reported absent");
            matched += 1;
        }
    }
    Ok(format!("worked example ok; {matched} matched golds never absent"))
}

fn polarity_analysis() -> Outcome {
    let corpus = corpus(45, 100);
    let f = mock_filter(MockPolicy::Polarity, 0, ContextMode::Sentence);
    let edf = run(&config(RunMode::Edf, 0.0, Some(f)), &corpus);
    let norm = NormalizationConfig::default();
    let report = polarity_breakdown(&corpus, RunMode::Edf, &targets(), &edf.predictions, &norm)
        .map_err(|e| e.to_string())?;
    let mut negated_matched = 0;
    for p in &edf.predictions {
        let cands: BTreeSet<String> = p.candidates.iter().map(|m| edf_core::normalize(&m.surface, &norm)).collect();
        negated_matched += corpus
            .gold_for(&p.doc_id, &p.entity_type)
            .filter(|g| g.polarity == Polarity::Negative && cands.contains(&edf_core::normalize(&g.surface, &norm)))
            .count();
    }
    ensure!(negated_matched > 0, "corpus produced no matched negated golds");
    ensure!(
        report.negative == negated_matched,
        "negative count {} != matched negated golds {negated_matched}",
        report.negative
    );
    ensure!(report.positive == 0, "positive golds rejected: {}", report.positive);
    Ok(format!("{} negated golds rejected, 0 positive", report.negative))
}

fn determinism_and_resume() -> Outcome {
    let corpus = corpus(46, 60);
    let filter = mock_filter(MockPolicy::Stochastic, 3, ContextMode::Sentence);
    let cfg = config(RunMode::Edf, 0.3, Some(filter));
    let tmp = tempfile::tempdir().unwrap();
    let report_of = |dir: &Path| std::fs::read(dir.join("report.json")).unwrap();

    let mut serial = cfg.clone();
    serial.concurrency = 1;
    let run_dir = |cfg: &edf_core::RunConfig, dir: &Path| {
        let backends = Backends::from_config(cfg, Some(&corpus)).unwrap();
        Pipeline::new(cfg.clone(), backends)
            .unwrap()
            .run_corpus(&corpus, Some(dir), None, None)
            .unwrap()
    };
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    let first = run_dir(&cfg, &a);
    run_dir(&serial, &b);
    ensure!(report_of(&a) == report_of(&b), "report.json differs between runs");

    // counted mocks, shared across the interrupted and resumed runs
    let gazetteer = Arc::new(Gazetteer::clinical_demo());
    let ner = Arc::new(GazetteerNer::new(gazetteer).with_contamination(0.3, 7));
    let clf = Arc::new(MockClassifier::new(ClassifierPolicy::stochastic(3)));
    let backends = Backends::new(ner.clone()).with_classifier(clf.clone());
    let pipeline = Pipeline::new(serial.clone(), backends).unwrap();

    let fresh_ner = Arc::new(GazetteerNer::new(Arc::new(Gazetteer::clinical_demo())).with_contamination(0.3, 7));
    let fresh_clf = Arc::new(MockClassifier::new(ClassifierPolicy::stochastic(3)));
    Pipeline::new(serial, Backends::new(fresh_ner.clone()).with_classifier(fresh_clf.clone()))
        .unwrap()
        .run_corpus(&corpus, None, None, None)
        .unwrap();

    let c = tmp.path().join("c");
    let cancel = AtomicBool::new(false);
    let stop_after = |done: usize, _total: usize| {
        if done >= 40 {
            cancel.store(true, Ordering::SeqCst);
        }
    };
    match pipeline.run_corpus(&corpus, Some(&c), Some(&cancel), Some(&stop_after)) {
        Err(Error::Interrupted { completed, total }) => {
            ensure!(completed < total, "interrupted run claims {completed}/{total}")
        }
        other => return Err(format!("expected an interruption, got {:?}", other.map(|_| ()))),
    }
    ensure!(!c.join("report.json").exists(), "interrupted run wrote a report");
    let resumed = pipeline.run_corpus(&corpus, Some(&c), None, None).map_err(|e| e.to_string())?;
    ensure!(
        ner.calls() == fresh_ner.calls(),
        "NER calls {} across interrupt+resume vs {} in one pass",
        ner.calls(),
        fresh_ner.calls()
    );
    ensure!(
        clf.calls() == fresh_clf.calls(),
        "filter calls {} across interrupt+resume vs {} in one pass",
        clf.calls(),
        fresh_clf.calls()
    );
    ensure!(resumed.report == first.report, "resumed report differs from an uninterrupted run");
    ensure!(report_of(&c) == report_of(&a), "resumed report.json bytes differ");
    Ok(format!(
        "identical reports; {} NER + {} filter calls, none repeated",
        ner.calls(),
        clf.calls()
    ))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("template and registry fidelity", templates_and_registries),
        ("metric oracle equivalence", metric_oracle),
        ("BIO round trip", bio_round_trip),
        ("threshold identities", threshold_identities),
        ("threshold monotonicity", threshold_monotonicity),
        ("ED recall dominance", ed_recall_dominance),
        ("filter subset and oracle precision", filter_subset_and_oracle),
        ("fully-absent fidelity", fully_absent_fidelity),
        ("polarity analysis", polarity_analysis),
        ("determinism and resume", determinism_and_resume),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        match outcome {
            Ok(detail) => println!("criterion {:>2} PASS  {name}: {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("criterion {:>2} FAIL  {name}: {why}", i + 1);
            }
        }
    }
    if failed > 0 {
        println!("{failed} criterion(s) failed");
        std::process::exit(1);
    }
}
