//! Run configuration, loaded from TOML.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::backend::{BackendDescriptor, BackendKind};
use crate::error::{Error, Result};
use crate::filter::FilterConfig;
use crate::types::{NormalizationConfig, SubTypeSource};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunMode {
    /// One retrieval for the target type.
    Baseline,
    /// Union of the sub-type retrievals.
    Ed,
    /// Baseline followed by the filter.
    F,
    /// Decomposition followed by the filter.
    Edf,
}

impl RunMode {
    pub fn decomposes(self) -> bool {
        matches!(self, RunMode::Ed | RunMode::Edf)
    }

    pub fn filters(self) -> bool {
        matches!(self, RunMode::F | RunMode::Edf)
    }
}

impl fmt::Display for RunMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RunMode::Baseline => "baseline",
            RunMode::Ed => "ed",
            RunMode::F => "f",
            RunMode::Edf => "edf",
        })
    }
}

impl FromStr for RunMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "baseline" | "b" => Ok(RunMode::Baseline),
            "ed" => Ok(RunMode::Ed),
            "f" => Ok(RunMode::F),
            "edf" => Ok(RunMode::Edf),
            other => Err(Error::invalid(
                "run mode",
                format!("{other:?} (expected baseline, ed, f or edf)"),
            )),
        }
    }
}

/// Text handed to the NER model per call.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InputUnit {
    #[default]
    Document,
    /// One call per sentence; results are unioned.
    Sentence,
}

impl FromStr for InputUnit {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "document" => Ok(InputUnit::Document),
            "sentence" => Ok(InputUnit::Sentence),
            other => Err(Error::invalid(
                "input unit",
                format!("{other:?} (expected document or sentence)"),
            )),
        }
    }
}

fn yes() -> bool {
    true
}

fn default_concurrency() -> usize {
    4
}

fn default_ner() -> BackendDescriptor {
    BackendDescriptor::new(BackendKind::SingleType)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub mode: RunMode,
    pub targets: Vec<String>,
    /// Sub-type source; required by modes ed and edf.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decomposer: Option<SubTypeSource>,
    /// Add the target itself to every sub-type set.
    #[serde(default = "yes")]
    pub include_target: bool,
    /// Custom sub-type list files per target.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub custom_subtypes: BTreeMap<String, PathBuf>,
    #[serde(default)]
    pub input_unit: InputUnit,
    #[serde(default = "default_concurrency")]
    pub concurrency: usize,
    #[serde(default)]
    pub normalization: NormalizationConfig,
    #[serde(default = "default_ner")]
    pub ner: BackendDescriptor,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub filter: Option<FilterConfig>,
    /// Model asked for sub-types when the decomposer is llm-generated.
    /// Without it the bundled llm-generated lists are used.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decomposer_backend: Option<BackendDescriptor>,
}

impl RunConfig {
    pub fn new(mode: RunMode, targets: Vec<String>, ner: BackendDescriptor) -> Self {
        RunConfig {
            mode,
            targets,
            decomposer: None,
            include_target: true,
            custom_subtypes: BTreeMap::new(),
            input_unit: InputUnit::Document,
            concurrency: default_concurrency(),
            normalization: NormalizationConfig::default(),
            ner,
            filter: None,
            decomposer_backend: None,
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| {
            let at = e
                .span()
                .map(|s| format!("line {}: ", text[..s.start].matches('\n').count() + 1))
                .unwrap_or_default();
            Error::Config(format!("{at}{}", e.message()))
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Applies `EDF_ENDPOINT`, `EDF_FILTER_ENDPOINT` and `EDF_TIMEOUT_MS`.
    pub fn apply_env(&mut self, get: impl Fn(&str) -> Option<String>) -> Result<()> {
        if let Some(url) = get("EDF_ENDPOINT") {
            self.ner.endpoint = Some(url);
        }
        if let Some(url) = get("EDF_FILTER_ENDPOINT") {
            if let Some(f) = &mut self.filter {
                f.backend.endpoint = Some(url);
            }
        }
        if let Some(ms) = get("EDF_TIMEOUT_MS") {
            let ms: u64 = ms
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("EDF_TIMEOUT_MS: {ms:?} is not a number of milliseconds")))?;
            self.ner.timeout_ms = ms;
            if let Some(f) = &mut self.filter {
                f.backend.timeout_ms = ms;
            }
            if let Some(d) = &mut self.decomposer_backend {
                d.timeout_ms = ms;
            }
        }
        Ok(())
    }

    /// Checks cross-field requirements. Messages name the missing field.
    pub fn validate(&self) -> Result<()> {
        if self.mode.filters() {
            let Some(f) = &self.filter else {
                return Err(Error::Config(format!(
                    "missing field `filter.backend`: mode {} needs a filter endpoint or mock",
                    self.mode
                )));
            };
            if f.backend.kind != BackendKind::Mock && f.backend.endpoint.is_none() {
                return Err(Error::Config(
                    "missing field `filter.backend.endpoint` (set it, EDF_FILTER_ENDPOINT, or use kind = \"mock\")"
                        .into(),
                ));
            }
            f.validate()?;
        }
        if self.targets.is_empty() || self.targets.iter().any(|t| t.trim().is_empty()) {
            return Err(Error::Config("targets: at least one non-empty target type is required".into()));
        }
        if self.concurrency == 0 {
            return Err(Error::Config("concurrency must be at least 1".into()));
        }
        if self.mode.decomposes() {
            match self.decomposer {
                None => {
                    return Err(Error::Config(format!(
                        "missing field `decomposer`: mode {} needs a sub-type source",
                        self.mode
                    )))
                }
                Some(SubTypeSource::Custom) => {
                    for t in &self.targets {
                        if !self.custom_subtypes.keys().any(|k| k.eq_ignore_ascii_case(t)) {
                            return Err(Error::Config(format!(
                                "missing field `custom_subtypes.{t}`: custom decomposition needs a list file"
                            )));
                        }
                    }
                }
                Some(_) => {}
            }
        }
        match self.ner.kind {
            BackendKind::Mock => {}
            BackendKind::Classifier => {
                return Err(Error::Config("ner.kind: a classifier cannot serve entity extraction".into()))
            }
            _ if self.ner.endpoint.is_none() => {
                return Err(Error::Config(
                    "missing field `ner.endpoint` (set it, EDF_ENDPOINT, or use ner.kind = \"mock\")".into(),
                ))
            }
            _ => {}
        }
        self.ner.decoding.validate()?;
        if let Some(d) = &self.decomposer_backend {
            if d.kind != BackendKind::Mock && d.endpoint.is_none() {
                return Err(Error::Config("missing field `decomposer_backend.endpoint`".into()));
            }
        }
        Ok(())
    }

    /// Fields that must agree for a run directory to be resumed.
    pub(crate) fn resume_key(&self) -> Result<serde_json::Value> {
        let mut v = serde_json::to_value(self)?;
        if let Some(o) = v.as_object_mut() {
            o.remove("concurrency");
        }
        Ok(v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::context::ContextMode;

    const EDF: &str = r#"
mode = "edf"
targets = ["treatment"]
decomposer = "annotation"

[ner]
kind = "mock"

[ner.mock]
contamination_rate = 0.3
seed = 7

[filter]
context = "sentence"
threshold = 0.2

[filter.backend]
kind = "mock"

[filter.backend.mock]
policy = "oracle"
"#;

    #[test]
    fn parses_and_validates() {
        let c = RunConfig::from_toml(EDF).unwrap();
        assert_eq!(c.mode, RunMode::Edf);
        assert_eq!(c.decomposer, Some(SubTypeSource::Annotation));
        let f = c.filter.as_ref().unwrap();
        assert_eq!(f.context, ContextMode::Sentence);
        assert_eq!(f.threshold, 0.2);
        assert_eq!(c.ner.mock.as_ref().unwrap().contamination_rate, 0.3);
        c.validate().unwrap();
        let back = RunConfig::from_toml(&c.to_toml().unwrap()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn missing_filter_is_named() {
        let c = RunConfig::from_toml("mode = \"edf\"\ntargets = [\"treatment\"]\ndecomposer = \"umls\"\n[ner]\nkind = \"mock\"\n")
            .unwrap();
        let msg = c.validate().unwrap_err().to_string();
        assert!(msg.contains("filter.backend"), "{msg}");
        let c = RunConfig::from_toml("mode = \"ed\"\ntargets = [\"treatment\"]\n[ner]\nkind = \"mock\"\n").unwrap();
        assert!(c.validate().unwrap_err().to_string().contains("decomposer"));
        let c = RunConfig::from_toml("mode = \"baseline\"\ntargets = [\"treatment\"]\n").unwrap();
        assert!(c.validate().unwrap_err().to_string().contains("ner.endpoint"));
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let msg = RunConfig::from_toml("mode = \"edf\"\ntargets = [\"t\"]\nbogus = 1\n")
            .unwrap_err()
            .to_string();
        assert!(msg.contains("line 3"), "{msg}");
    }

    #[test]
    fn env_overrides() {
        let mut c = RunConfig::from_toml(EDF).unwrap();
        let env = |k: &str| match k {
            "EDF_ENDPOINT" => Some("http://ner".to_string()),
            "EDF_FILTER_ENDPOINT" => Some("http://filter".to_string()),
            "EDF_TIMEOUT_MS" => Some("1500".to_string()),
            _ => None,
        };
        c.apply_env(env).unwrap();
        assert_eq!(c.ner.endpoint.as_deref(), Some("http://ner"));
        let f = c.filter.unwrap();
        assert_eq!(f.backend.endpoint.as_deref(), Some("http://filter"));
        assert_eq!(f.backend.timeout_ms, 1500);
    }
}
