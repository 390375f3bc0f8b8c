//! Exact-match scoring and the error analyses run over finished runs.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::filter::apply_threshold;
use crate::pipeline::{DocPrediction, RunMode};
use crate::types::{normalize, GoldEntity, Mention, NormalizationConfig, Polarity};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Counts {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl Counts {
    pub fn add(&mut self, other: Counts) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.fn_ += other.fn_;
    }

    pub fn scores(&self) -> Scores {
        prf(self.tp, self.fp, self.fn_)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Scores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Precision, recall and F1 with 0 for empty denominators.
pub fn prf(tp: usize, fp: usize, fn_: usize) -> Scores {
    let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Scores {
        precision,
        recall,
        f1,
    }
}

/// Multiset matching on normalized surfaces within one document:
/// tp = sum over surfaces of min(predicted count, gold count).
pub fn exact_match<'a, P, G>(preds: P, golds: G, cfg: &NormalizationConfig) -> Counts
where
    P: IntoIterator<Item = &'a str>,
    G: IntoIterator<Item = &'a str>,
{
    let mut counts: HashMap<String, (usize, usize)> = HashMap::new();
    let mut n_pred = 0;
    let mut n_gold = 0;
    for p in preds {
        counts.entry(normalize(p, cfg)).or_default().0 += 1;
        n_pred += 1;
    }
    for g in golds {
        counts.entry(normalize(g, cfg)).or_default().1 += 1;
        n_gold += 1;
    }
    let tp = counts.values().map(|(p, g)| p.min(g)).sum();
    Counts {
        tp,
        fp: n_pred - tp,
        fn_: n_gold - tp,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub key: String,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl ScoreRow {
    fn new(key: impl Into<String>, c: Counts) -> Self {
        let s = c.scores();
        ScoreRow {
            key: key.into(),
            tp: c.tp,
            fp: c.fp,
            fn_: c.fn_,
            precision: s.precision,
            recall: s.recall,
            f1: s.f1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FailureRow {
    pub doc_id: String,
    pub entity_type: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub per_type: Vec<ScoreRow>,
    pub per_document: Vec<ScoreRow>,
    /// (document, type) units whose extraction failed; scored as empty.
    #[serde(default)]
    pub failures: Vec<FailureRow>,
    /// (document, type) units never processed; scored as empty.
    #[serde(default)]
    pub unprocessed: usize,
}

impl EvalReport {
    pub fn counts(&self) -> Counts {
        Counts {
            tp: self.tp,
            fp: self.fp,
            fn_: self.fn_,
        }
    }

    pub fn scores(&self) -> Scores {
        Scores {
            precision: self.precision,
            recall: self.recall,
            f1: self.f1,
        }
    }
}

/// Iterates every (document, target) unit of the corpus with its prediction,
/// if one exists.
fn units<'a>(
    corpus: &'a Corpus,
    targets: &'a [String],
    predictions: &'a [DocPrediction],
) -> impl Iterator<Item = (&'a str, &'a str, Option<&'a DocPrediction>)> + 'a {
    let index: HashMap<(&str, String), &DocPrediction> = predictions
        .iter()
        .map(|p| ((p.doc_id.as_str(), p.entity_type.to_lowercase()), p))
        .collect();
    let mut out = Vec::with_capacity(corpus.documents.len() * targets.len());
    for doc in &corpus.documents {
        for t in targets {
            let pred = index.get(&(doc.id(), t.to_lowercase())).copied();
            out.push((doc.id(), t.as_str(), pred));
        }
    }
    out.into_iter()
}

/// Scores predictions against the corpus gold for the given targets.
/// `accept` decides which candidates count as final predictions.
pub fn score_predictions(
    corpus: &Corpus,
    targets: &[String],
    predictions: &[DocPrediction],
    cfg: &NormalizationConfig,
    accept: impl Fn(&Mention) -> bool,
) -> EvalReport {
    let mut total = Counts::default();
    let mut per_type: BTreeMap<usize, Counts> = BTreeMap::new();
    let mut per_doc: Vec<(String, Counts)> = Vec::new();
    let mut failures = Vec::new();
    let mut unprocessed = 0;
    for (doc_id, t, pred) in units(corpus, targets, predictions) {
        let mentions: Vec<&str> = match pred {
            Some(p) if p.is_ok() => p
                .candidates
                .iter()
                .filter(|m| accept(m))
                .map(|m| m.surface.as_str())
                .collect(),
            Some(p) => {
                failures.push(FailureRow {
                    doc_id: doc_id.to_string(),
                    entity_type: t.to_string(),
                    error: p.error.clone().unwrap_or_default(),
                });
                Vec::new()
            }
            None => {
                unprocessed += 1;
                Vec::new()
            }
        };
        let golds = corpus.gold_for(doc_id, t).map(|g| g.surface.as_str());
        let c = exact_match(mentions, golds, cfg);
        total.add(c);
        let ti = targets.iter().position(|x| x == t).expect("target from list");
        per_type.entry(ti).or_default().add(c);
        match per_doc.last_mut() {
            Some((id, acc)) if id == doc_id => acc.add(c),
            _ => per_doc.push((doc_id.to_string(), c)),
        }
    }
    let s = total.scores();
    EvalReport {
        tp: total.tp,
        fp: total.fp,
        fn_: total.fn_,
        precision: s.precision,
        recall: s.recall,
        f1: s.f1,
        per_type: per_type
            .into_iter()
            .map(|(i, c)| ScoreRow::new(targets[i].clone(), c))
            .collect(),
        per_document: per_doc.into_iter().map(|(id, c)| ScoreRow::new(id, c)).collect(),
        failures,
        unprocessed,
    }
}

/// Letter/digit runs of the normalized surface.
fn tokens(s: &str, cfg: &NormalizationConfig) -> Vec<String> {
    normalize(s, cfg)
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(|t| t.to_lowercase())
        .collect()
}

/// A gold entity is fully absent when no prediction shares a token with it.
/// Golds without any letter or digit fall back to exact normalized match.
pub fn is_fully_absent(gold: &str, preds: &[&str], cfg: &NormalizationConfig) -> bool {
    let gold_tokens = tokens(gold, cfg);
    if gold_tokens.is_empty() {
        let g = normalize(gold, cfg);
        return !preds.iter().any(|p| normalize(p, cfg) == g);
    }
    let gold_tokens: HashSet<String> = gold_tokens.into_iter().collect();
    !preds
        .iter()
        .any(|p| tokens(p, cfg).iter().any(|t| gold_tokens.contains(t)))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AbsentEntity {
    pub doc_id: String,
    pub entity_type: String,
    pub surface: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct AbsenceReport {
    pub n_gold: usize,
    pub n_fully_absent: usize,
    /// n_fully_absent / n_gold, or 0 without gold entities.
    pub ratio: f64,
    pub absent: Vec<AbsentEntity>,
}

impl AbsenceReport {
    fn finish(mut self) -> Self {
        self.ratio = if self.n_gold == 0 {
            0.0
        } else {
            self.n_fully_absent as f64 / self.n_gold as f64
        };
        self
    }
}

/// Fully-absent analysis for one document's golds and predictions.
pub fn fully_absent(golds: &[GoldEntity], preds: &[&str], cfg: &NormalizationConfig) -> AbsenceReport {
    let mut r = AbsenceReport::default();
    for g in golds {
        r.n_gold += 1;
        if is_fully_absent(&g.surface, preds, cfg) {
            r.n_fully_absent += 1;
            r.absent.push(AbsentEntity {
                doc_id: String::new(),
                entity_type: g.entity_type.clone(),
                surface: g.surface.clone(),
            });
        }
    }
    r.finish()
}

/// Fully-absent analysis over the final predictions of a run.
pub fn absence_over_run(
    corpus: &Corpus,
    targets: &[String],
    predictions: &[DocPrediction],
    cfg: &NormalizationConfig,
) -> AbsenceReport {
    let mut r = AbsenceReport::default();
    for (doc_id, t, pred) in units(corpus, targets, predictions) {
        let preds: Vec<&str> = pred
            .filter(|p| p.is_ok())
            .into_iter()
            .flat_map(|p| p.candidates.iter())
            .filter(|m| m.is_accepted())
            .map(|m| m.surface.as_str())
            .collect();
        for g in corpus.gold_for(doc_id, t) {
            r.n_gold += 1;
            if is_fully_absent(&g.surface, &preds, cfg) {
                r.n_fully_absent += 1;
                r.absent.push(AbsentEntity {
                    doc_id: doc_id.to_string(),
                    entity_type: g.entity_type.clone(),
                    surface: g.surface.clone(),
                });
            }
        }
    }
    r.finish()
}

/// Gold entities the filter rejected, grouped by polarity.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct PolarityReport {
    pub positive: usize,
    pub negative: usize,
    pub unspecified: usize,
    pub total: usize,
    /// Golds matched by a pre-filter candidate, by polarity.
    pub matched_positive: usize,
    pub matched_negative: usize,
    pub matched_unspecified: usize,
}

fn require_verdicts(mode: RunMode) -> Result<()> {
    if mode.filters() {
        Ok(())
    } else {
        Err(Error::invalid(
            "analysis",
            format!("run mode {mode} has no filter verdicts"),
        ))
    }
}

/// A gold is rejected when its normalized surface matches a pre-filter
/// candidate whose verdict does not accept it.
pub fn polarity_breakdown(
    corpus: &Corpus,
    mode: RunMode,
    targets: &[String],
    predictions: &[DocPrediction],
    cfg: &NormalizationConfig,
) -> Result<PolarityReport> {
    require_verdicts(mode)?;
    let mut r = PolarityReport::default();
    for (doc_id, t, pred) in units(corpus, targets, predictions) {
        let Some(pred) = pred.filter(|p| p.is_ok()) else {
            continue;
        };
        let by_norm: HashMap<String, &Mention> = pred
            .candidates
            .iter()
            .map(|m| (normalize(&m.surface, cfg), m))
            .collect();
        for g in corpus.gold_for(doc_id, t) {
            let Some(m) = by_norm.get(&normalize(&g.surface, cfg)) else {
                continue;
            };
            let rejected = !m.is_accepted();
            let (matched, hit) = match g.polarity {
                Polarity::Positive => (&mut r.matched_positive, &mut r.positive),
                Polarity::Negative => (&mut r.matched_negative, &mut r.negative),
                Polarity::Unspecified => (&mut r.matched_unspecified, &mut r.unspecified),
            };
            *matched += 1;
            if rejected {
                *hit += 1;
                r.total += 1;
            }
        }
    }
    Ok(r)
}

/// Parses a threshold grid "start:end:step" into evenly spaced values
/// including both ends.
pub fn parse_grid(spec: &str) -> Result<Vec<f64>> {
    let bad = |m: &str| Error::invalid("threshold grid", format!("{spec:?}: {m}"));
    let parts: Vec<&str> = spec.split(':').collect();
    if parts.len() == 1 {
        return spec
            .split(',')
            .map(|v| {
                let v: f64 = v.trim().parse().map_err(|_| bad("not a number"))?;
                if (0.0..=1.0).contains(&v) {
                    Ok(v)
                } else {
                    Err(bad("values must lie in [0, 1]"))
                }
            })
            .collect();
    }
    let [a, b, step] = parts[..] else {
        return Err(bad("expected start:end:step"));
    };
    let num = |s: &str| s.trim().parse::<f64>().map_err(|_| bad("not a number"));
    let (a, b, step) = (num(a)?, num(b)?, num(step)?);
    if !(0.0..=1.0).contains(&a) || !(0.0..=1.0).contains(&b) || a > b {
        return Err(bad("need 0 <= start <= end <= 1"));
    }
    if !(step > 0.0) {
        return Err(bad("step must be positive"));
    }
    let n = ((b - a) / step).round() as usize;
    if n == 0 {
        return Ok(vec![a]);
    }
    Ok((0..=n).map(|i| a + (b - a) * i as f64 / n as f64).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub tau: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

/// Re-scores stored verdicts at each threshold. Never queries a backend.
pub fn sweep_threshold(
    corpus: &Corpus,
    mode: RunMode,
    targets: &[String],
    predictions: &[DocPrediction],
    cfg: &NormalizationConfig,
    grid: &[f64],
) -> Result<Vec<SweepRow>> {
    require_verdicts(mode)?;
    for p in predictions.iter().filter(|p| p.is_ok()) {
        if let Some(m) = p.candidates.iter().find(|m| m.verdict.is_none()) {
            return Err(Error::invalid(
                "run",
                format!(
                    "document {}: candidate {:?} ({}) has no verdict with p_no",
                    p.doc_id, m.surface, p.entity_type
                ),
            ));
        }
    }
    for &tau in grid {
        apply_threshold(crate::types::Answer::Yes, 0.0, tau)?;
    }
    Ok(grid
        .iter()
        .map(|&tau| {
            let report = score_predictions(corpus, targets, predictions, cfg, |m| {
                let v = m.verdict.expect("checked above");
                apply_threshold(v.answer, v.p_no, tau).expect("checked above")
            });
            SweepRow {
                tau,
                precision: report.precision,
                recall: report.recall,
                f1: report.f1,
                tp: report.tp,
                fp: report.fp,
                fn_: report.fn_,
            }
        })
        .collect())
}

/// Writes sweep rows as CSV with the header `tau,precision,recall,f1`.
pub fn write_sweep_csv(rows: &[SweepRow], mut out: impl Write) -> std::io::Result<()> {
    writeln!(out, "tau,precision,recall,f1")?;
    for r in rows {
        writeln!(out, "{},{},{},{}", r.tau, r.precision, r.recall, r.f1)?;
    }
    Ok(())
}
