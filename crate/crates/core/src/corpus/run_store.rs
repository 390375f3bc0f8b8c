//! Run directories: `config.json`, `predictions.jsonl`, `verdicts.jsonl`
//! and `report.json`.
//!
//! Predictions are appended as units finish. For filtering modes a unit's
//! verdict lines are written before its prediction line, so a prediction
//! line marks the unit complete; anything after the last complete line is
//! discarded on resume.

use std::collections::{HashMap, HashSet};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::context::ContextMode;
use crate::error::{Error, Result};
use crate::eval::EvalReport;
use crate::filter::apply_threshold;
use crate::pipeline::DocPrediction;
use crate::types::{Answer, FilterVerdict};

const CONFIG: &str = "config.json";
const PREDICTIONS: &str = "predictions.jsonl";
const VERDICTS: &str = "verdicts.jsonl";
const REPORT: &str = "report.json";

/// Everything a finished run produced.
#[derive(Debug, Clone, PartialEq)]
pub struct RunArtifacts {
    pub config: RunConfig,
    pub predictions: Vec<DocPrediction>,
    pub report: EvalReport,
}

impl RunArtifacts {
    /// Verdict table derived from the predictions.
    pub fn verdicts(&self) -> Vec<VerdictRecord> {
        let mode = self.config.filter.as_ref().map(|f| f.context).unwrap_or_default();
        self.predictions.iter().flat_map(|p| verdict_records(p, mode)).collect()
    }

    pub fn target_names(&self) -> Vec<String> {
        self.config.targets.iter().map(|t| t.trim().to_string()).collect()
    }
}

/// One line of `verdicts.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerdictRecord {
    pub doc_id: String,
    pub surface: String,
    pub entity_type: String,
    pub answer: Answer,
    pub p_no: f64,
    pub context_mode: ContextMode,
}

fn verdict_records(p: &DocPrediction, mode: ContextMode) -> Vec<VerdictRecord> {
    p.candidates
        .iter()
        .filter_map(|m| {
            m.verdict.map(|v| VerdictRecord {
                doc_id: p.doc_id.clone(),
                surface: m.surface.clone(),
                entity_type: p.entity_type.clone(),
                answer: v.answer,
                p_no: v.p_no,
                context_mode: mode,
            })
        })
        .collect()
}

/// Prediction as stored: verdicts live in `verdicts.jsonl`.
fn stripped(p: &DocPrediction) -> DocPrediction {
    let mut p = p.clone();
    for m in &mut p.candidates {
        m.verdict = None;
    }
    p
}

fn json_line<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string(value)?;
    s.push('\n');
    Ok(s)
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn require(dir: &Path, name: &'static str) -> Result<PathBuf> {
    let p = dir.join(name);
    if p.is_file() {
        Ok(p)
    } else {
        Err(Error::RunFileMissing {
            dir: dir.to_path_buf(),
            missing: name,
        })
    }
}

/// Reads JSON lines. With `tolerant`, an unparseable final line (a write
/// cut short) is dropped instead of failing.
fn read_lines<T: for<'de> Deserialize<'de>>(path: &Path, tolerant: bool) -> Result<Vec<T>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let lines: Vec<String> = BufReader::new(file)
        .lines()
        .collect::<std::io::Result<_>>()
        .map_err(|e| Error::io(path, e))?;
    let last = lines.iter().rposition(|l| !l.trim().is_empty());
    let mut out = Vec::new();
    for (i, line) in lines.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str(line) {
            Ok(v) => out.push(v),
            Err(_) if tolerant && Some(i) == last => {
                log::warn!("{}: dropping incomplete final line", path.display());
            }
            Err(e) => {
                return Err(Error::Line {
                    path: path.to_path_buf(),
                    line: i + 1,
                    message: e.to_string(),
                })
            }
        }
    }
    Ok(out)
}

type VerdictKey = (String, String, String);

fn verdict_key(doc_id: &str, entity_type: &str, surface: &str) -> VerdictKey {
    (doc_id.to_string(), entity_type.to_lowercase(), surface.to_string())
}

/// Re-attaches stored verdicts. Returns false when some candidate of a
/// filtering run has none.
fn attach(p: &mut DocPrediction, verdicts: &HashMap<VerdictKey, VerdictRecord>, threshold: Option<f64>) -> Result<bool> {
    let Some(tau) = threshold else {
        return Ok(true);
    };
    if !p.is_ok() {
        return Ok(true);
    }
    for m in &mut p.candidates {
        let Some(v) = verdicts.get(&verdict_key(&p.doc_id, &p.entity_type, &m.surface)) else {
            return Ok(false);
        };
        m.verdict = Some(FilterVerdict {
            answer: v.answer,
            p_no: v.p_no,
            accepted: apply_threshold(v.answer, v.p_no, tau)?,
        });
    }
    Ok(true)
}

fn filter_threshold(config: &RunConfig) -> Option<f64> {
    if config.mode.filters() {
        config.filter.as_ref().map(|f| f.threshold)
    } else {
        None
    }
}

fn index_verdicts(records: Vec<VerdictRecord>) -> HashMap<VerdictKey, VerdictRecord> {
    records
        .into_iter()
        .map(|v| (verdict_key(&v.doc_id, &v.entity_type, &v.surface), v))
        .collect()
}

/// Writes a complete run directory, replacing any previous contents.
pub fn persist_run(dir: impl AsRef<Path>, run: &RunArtifacts) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_file(&dir.join(CONFIG), &serde_json::to_string_pretty(&run.config)?)?;
    let mut preds = String::new();
    for p in &run.predictions {
        preds.push_str(&json_line(&stripped(p))?);
    }
    write_file(&dir.join(PREDICTIONS), &preds)?;
    let mut verdicts = String::new();
    for v in run.verdicts() {
        verdicts.push_str(&json_line(&v)?);
    }
    write_file(&dir.join(VERDICTS), &verdicts)?;
    let mut report = serde_json::to_string_pretty(&run.report)?;
    report.push('\n');
    write_file(&dir.join(REPORT), &report)
}

/// Loads a finished run directory. Every file must be present.
pub fn load_run(dir: impl AsRef<Path>) -> Result<RunArtifacts> {
    let dir = dir.as_ref();
    if !dir.is_dir() {
        return Err(Error::RunDir {
            dir: dir.to_path_buf(),
            message: "not a directory".into(),
        });
    }
    let config_path = require(dir, CONFIG)?;
    let preds_path = require(dir, PREDICTIONS)?;
    let verdicts_path = require(dir, VERDICTS)?;
    let report_path = require(dir, REPORT)?;
    let config: RunConfig = read_json(&config_path)?;
    let verdicts = index_verdicts(read_lines(&verdicts_path, false)?);
    let mut predictions: Vec<DocPrediction> = read_lines(&preds_path, false)?;
    let tau = filter_threshold(&config);
    for p in &mut predictions {
        if !attach(p, &verdicts, tau)? {
            return Err(Error::RunDir {
                dir: dir.to_path_buf(),
                message: format!(
                    "verdicts.jsonl lacks verdicts for document {} ({})",
                    p.doc_id, p.entity_type
                ),
            });
        }
    }
    let report: EvalReport = read_json(&report_path)?;
    Ok(RunArtifacts {
        config,
        predictions,
        report,
    })
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Line {
        path: path.to_path_buf(),
        line: e.line(),
        message: e.to_string(),
    })
}

/// Incremental writer for a run in progress.
pub struct RunWriter {
    dir: PathBuf,
    predictions: File,
    verdicts: File,
    completed: Vec<DocPrediction>,
    filtering: bool,
}

impl RunWriter {
    /// Opens `dir` for a run with `config`, creating it if needed. An
    /// existing run must have been started with an equivalent config; its
    /// complete units are kept and everything else is discarded.
    pub fn open(dir: impl AsRef<Path>, config: &RunConfig) -> Result<Self> {
        let dir = dir.as_ref().to_path_buf();
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let config_path = dir.join(CONFIG);
        let mut completed = Vec::new();
        if config_path.is_file() {
            let previous: RunConfig = read_json(&config_path)?;
            if previous.resume_key()? != config.resume_key()? {
                return Err(Error::RunDir {
                    dir,
                    message: "existing run was started with a different configuration; use a new directory".into(),
                });
            }
            let preds_path = dir.join(PREDICTIONS);
            let verdicts_path = dir.join(VERDICTS);
            let preds: Vec<DocPrediction> = if preds_path.is_file() {
                read_lines(&preds_path, true)?
            } else {
                Vec::new()
            };
            let verdicts = if verdicts_path.is_file() {
                index_verdicts(read_lines(&verdicts_path, true)?)
            } else {
                HashMap::new()
            };
            let tau = filter_threshold(config);
            let mut seen = HashSet::new();
            for mut p in preds {
                if !p.is_ok() || !seen.insert((p.doc_id.clone(), p.entity_type.to_lowercase())) {
                    continue;
                }
                if attach(&mut p, &verdicts, tau)? {
                    completed.push(p);
                }
            }
        }
        write_file(&config_path, &serde_json::to_string_pretty(config)?)?;
        let _ = std::fs::remove_file(dir.join(REPORT));
        let filtering = config.mode.filters();
        let mode = config.filter.as_ref().map(|f| f.context).unwrap_or_default();
        let mut preds = String::new();
        let mut verdicts = String::new();
        for p in &completed {
            preds.push_str(&json_line(&stripped(p))?);
            for v in verdict_records(p, mode) {
                verdicts.push_str(&json_line(&v)?);
            }
        }
        write_file(&dir.join(PREDICTIONS), &preds)?;
        write_file(&dir.join(VERDICTS), &verdicts)?;
        let append = |name: &str| {
            let p = dir.join(name);
            OpenOptions::new().append(true).open(&p).map_err(|e| Error::io(&p, e))
        };
        Ok(RunWriter {
            predictions: append(PREDICTIONS)?,
            verdicts: append(VERDICTS)?,
            dir,
            completed,
            filtering,
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// Complete units found when the directory was opened.
    pub fn completed(&self) -> &[DocPrediction] {
        &self.completed
    }

    /// Records one finished unit.
    pub fn append(&mut self, p: &DocPrediction, context_mode: Option<ContextMode>) -> Result<()> {
        if self.filtering {
            let mut lines = String::new();
            for v in verdict_records(p, context_mode.unwrap_or_default()) {
                lines.push_str(&json_line(&v)?);
            }
            self.verdicts
                .write_all(lines.as_bytes())
                .and_then(|_| self.verdicts.flush())
                .map_err(|e| Error::io(self.dir.join(VERDICTS), e))?;
        }
        self.predictions
            .write_all(json_line(&stripped(p))?.as_bytes())
            .and_then(|_| self.predictions.flush())
            .map_err(|e| Error::io(self.dir.join(PREDICTIONS), e))
    }

    /// Rewrites the directory in canonical order, without a report.
    pub fn checkpoint(self, run: &RunArtifacts) -> Result<()> {
        let dir = self.dir.clone();
        drop(self);
        persist_run(&dir, run)?;
        let report = dir.join(REPORT);
        std::fs::remove_file(&report).map_err(|e| Error::io(&report, e))
    }

    /// Rewrites the directory in canonical order with the final report.
    pub fn finalize(self, run: &RunArtifacts) -> Result<()> {
        let dir = self.dir.clone();
        drop(self);
        persist_run(&dir, run)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{BackendDescriptor, BackendKind};
    use crate::config::RunMode;
    use crate::eval::score_predictions;
    use crate::filter::FilterConfig;
    use crate::pipeline::UnitStatus;
    use crate::types::{Mention, NormalizationConfig};

    fn run() -> RunArtifacts {
        let mut config = RunConfig::new(RunMode::F, vec!["treatment".into()], BackendDescriptor::new(BackendKind::Mock));
        let mut f = FilterConfig::new(BackendDescriptor::new(BackendKind::Mock));
        f.threshold = 0.3;
        config.filter = Some(f);
        let norm = NormalizationConfig::default();
        let mut m = Mention::new("Aspirin", &norm).unwrap().with_origin("treatment");
        m.verdict = Some(FilterVerdict {
            answer: Answer::Yes,
            p_no: 0.1 + 0.2,
            accepted: true,
        });
        let mut n = Mention::new("endoscopy", &norm).unwrap().with_origin("treatment");
        let p_no = 1.0 / (1.0 + (0.37f64).exp());
        n.verdict = Some(FilterVerdict {
            answer: Answer::No,
            p_no: 1.0 - p_no,
            accepted: false,
        });
        let predictions = vec![
            DocPrediction {
                doc_id: "d1".into(),
                entity_type: "treatment".into(),
                status: UnitStatus::Ok,
                error: None,
                candidates: vec![m, n],
                warnings: vec![],
            },
            DocPrediction {
                doc_id: "d2".into(),
                entity_type: "treatment".into(),
                status: UnitStatus::Failed,
                error: Some("boom".into()),
                candidates: vec![],
                warnings: vec![],
            },
        ];
        let corpus = crate::corpus::Corpus::new(vec![], Default::default(), vec![]).unwrap();
        let report = score_predictions(&corpus, &config.targets, &predictions, &norm, |m| m.is_accepted());
        RunArtifacts {
            config,
            predictions,
            report,
        }
    }

    #[test]
    fn round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let r = run();
        persist_run(dir.path(), &r).unwrap();
        assert_eq!(load_run(dir.path()).unwrap(), r);
    }

    #[test]
    fn missing_file_is_named() {
        let dir = tempfile::tempdir().unwrap();
        persist_run(dir.path(), &run()).unwrap();
        std::fs::remove_file(dir.path().join(VERDICTS)).unwrap();
        let msg = load_run(dir.path()).unwrap_err().to_string();
        assert!(msg.contains("verdicts.jsonl missing"), "{msg}");
    }

    #[test]
    fn writer_resumes_complete_units_only() {
        let dir = tempfile::tempdir().unwrap();
        let r = run();
        {
            let mut w = RunWriter::open(dir.path(), &r.config).unwrap();
            assert!(w.completed().is_empty());
            for p in &r.predictions {
                w.append(p, Some(ContextMode::None)).unwrap();
            }
        }
        // a torn write at the end
        let mut f = OpenOptions::new().append(true).open(dir.path().join(PREDICTIONS)).unwrap();
        f.write_all(b"{\"doc_id\":\"d3\",\"ent").unwrap();
        let w = RunWriter::open(dir.path(), &r.config).unwrap();
        assert_eq!(w.completed(), &r.predictions[..1]);

        let mut other = r.config.clone();
        other.mode = RunMode::Edf;
        other.decomposer = Some(crate::types::SubTypeSource::Umls);
        assert!(RunWriter::open(dir.path(), &other).is_err());
    }
}
