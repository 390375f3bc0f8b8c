//! Annotated corpora: the JSONL interchange format, a CoNLL/BIO bridge, a
//! seeded synthetic generator, and persisted run directories.

mod bio;
mod run_store;
mod synthetic;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{normalize, Document, EntityTypeSpec, GoldEntity, NormalizationConfig, Polarity, Span};

pub use bio::{load_bio, read_bio, BioLoad};
pub use run_store::{load_run, persist_run, RunArtifacts, RunWriter, VerdictRecord};
pub use synthetic::{generate_synthetic, NEGATION_CUES};

/// Documents with gold annotations and the catalog of annotated types.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub documents: Vec<Document>,
    pub gold: BTreeMap<String, Vec<GoldEntity>>,
    pub types: Vec<EntityTypeSpec>,
}

impl Corpus {
    /// Validates that gold entries point at existing documents, match the
    /// document text, and use catalogued types.
    pub fn new(
        documents: Vec<Document>,
        gold: BTreeMap<String, Vec<GoldEntity>>,
        types: Vec<EntityTypeSpec>,
    ) -> Result<Self> {
        let mut ids = HashMap::new();
        for (i, d) in documents.iter().enumerate() {
            if ids.insert(d.id().to_string(), i).is_some() {
                return Err(Error::invalid("corpus", format!("duplicate document id {:?}", d.id())));
            }
        }
        let catalog: BTreeSet<String> = types.iter().map(|t| t.name.to_lowercase()).collect();
        for (doc_id, entities) in &gold {
            let Some(&i) = ids.get(doc_id) else {
                return Err(Error::invalid(
                    "corpus",
                    format!("gold entries for unknown document {doc_id:?}"),
                ));
            };
            for g in entities {
                check_span(&documents[i], g)?;
                if !catalog.contains(&g.entity_type.to_lowercase()) {
                    return Err(Error::invalid(
                        "corpus",
                        format!("entity type {:?} is not in the catalog", g.entity_type),
                    ));
                }
            }
        }
        Ok(Corpus {
            documents,
            gold,
            types,
        })
    }

    pub fn document(&self, id: &str) -> Option<&Document> {
        self.documents.iter().find(|d| d.id() == id)
    }

    /// Gold entities of one type in one document.
    pub fn gold_for<'a>(&'a self, doc_id: &str, entity_type: &'a str) -> impl Iterator<Item = &'a GoldEntity> + 'a {
        self.gold
            .get(doc_id)
            .into_iter()
            .flatten()
            .filter(move |g| g.entity_type.eq_ignore_ascii_case(entity_type))
    }

    pub fn entity_type(&self, name: &str) -> Option<&EntityTypeSpec> {
        self.types.iter().find(|t| t.name.eq_ignore_ascii_case(name))
    }

    pub fn n_gold(&self) -> usize {
        self.gold.values().map(Vec::len).sum()
    }
}

fn check_span(doc: &Document, g: &GoldEntity) -> Result<()> {
    let found = doc.slice(g.span);
    if found != Some(g.surface.as_str()) {
        return Err(Error::SpanMismatch {
            doc_id: doc.id().to_string(),
            entity: g.surface.clone(),
            start: g.span.start,
            end: g.span.end,
            found: found.unwrap_or("<out of range>").to_string(),
        });
    }
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct DocRecord {
    id: String,
    text: String,
    #[serde(default)]
    entities: Vec<EntityRecord>,
}

#[derive(Debug, Serialize, Deserialize)]
struct EntityRecord {
    text: String,
    start: usize,
    end: usize,
    #[serde(rename = "type")]
    entity_type: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    polarity: Option<String>,
}

/// Reads the corpus JSONL format, one document per line. Offsets are
/// character offsets.
pub fn load_jsonl(path: impl AsRef<Path>) -> Result<Corpus> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut documents = Vec::new();
    let mut gold = BTreeMap::new();
    let mut types: Vec<EntityTypeSpec> = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let at = |message: String| Error::Line {
            path: path.to_path_buf(),
            line: n + 1,
            message,
        };
        let rec: DocRecord = serde_json::from_str(&line).map_err(|e| at(e.to_string()))?;
        let doc = Document::new(rec.id, rec.text);
        let mut entities = Vec::with_capacity(rec.entities.len());
        for e in rec.entities {
            let polarity = match e.polarity.as_deref() {
                None => Polarity::Unspecified,
                Some(p) => p.parse().map_err(|err: Error| at(err.to_string()))?,
            };
            if e.end < e.start {
                return Err(at(format!("entity {:?} has end < start", e.text)));
            }
            let g = GoldEntity {
                surface: e.text,
                span: Span::new(e.start, e.end),
                entity_type: e.entity_type,
                polarity,
            };
            check_span(&doc, &g).map_err(|err| at(err.to_string()))?;
            if !types.iter().any(|t| t.name.eq_ignore_ascii_case(&g.entity_type)) {
                types.push(EntityTypeSpec::known(g.entity_type.clone()).map_err(|err| at(err.to_string()))?);
            }
            entities.push(g);
        }
        if !entities.is_empty() {
            gold.insert(doc.id().to_string(), entities);
        }
        documents.push(doc);
    }
    Corpus::new(documents, gold, types)
}

/// Writes the corpus JSONL format.
pub fn write_jsonl(corpus: &Corpus, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for doc in &corpus.documents {
        let entities = corpus
            .gold
            .get(doc.id())
            .into_iter()
            .flatten()
            .map(|g| EntityRecord {
                text: g.surface.clone(),
                start: g.span.start,
                end: g.span.end,
                entity_type: g.entity_type.clone(),
                polarity: match g.polarity {
                    Polarity::Unspecified => None,
                    Polarity::Positive => Some("positive".into()),
                    Polarity::Negative => Some("negative".into()),
                },
            })
            .collect();
        let rec = DocRecord {
            id: doc.id().to_string(),
            text: doc.text().to_string(),
            entities,
        };
        serde_json::to_writer(&mut out, &rec)?;
        out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

/// Surface lists per sub-type, driving the mock NER backend and the
/// synthetic generator.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawGazetteer")]
pub struct Gazetteer {
    surfaces: BTreeMap<String, Vec<String>>,
    #[serde(default)]
    contamination: BTreeMap<String, Vec<String>>,
    /// Target type each sub-type's surfaces belong to.
    #[serde(default)]
    targets: BTreeMap<String, String>,
}

#[derive(Deserialize)]
struct RawGazetteer {
    surfaces: BTreeMap<String, Vec<String>>,
    #[serde(default)]
    contamination: BTreeMap<String, Vec<String>>,
    #[serde(default)]
    targets: BTreeMap<String, String>,
}

impl TryFrom<RawGazetteer> for Gazetteer {
    type Error = Error;

    fn try_from(raw: RawGazetteer) -> Result<Self> {
        Gazetteer::new(raw.surfaces, raw.contamination, raw.targets)
    }
}

impl Gazetteer {
    pub fn new(
        surfaces: BTreeMap<String, Vec<String>>,
        contamination: BTreeMap<String, Vec<String>>,
        targets: BTreeMap<String, String>,
    ) -> Result<Self> {
        let cfg = NormalizationConfig::default();
        for (subtype, list) in &surfaces {
            if list.is_empty() {
                return Err(Error::invalid("gazetteer", format!("sub-type {subtype:?} has no surfaces")));
            }
        }
        for (subtype, off) in &contamination {
            if off.is_empty() {
                return Err(Error::invalid(
                    "gazetteer",
                    format!("contamination list for {subtype:?} is empty"),
                ));
            }
            let on: BTreeSet<String> = surfaces
                .iter()
                .filter(|(k, _)| k.eq_ignore_ascii_case(subtype))
                .flat_map(|(_, v)| v.iter().map(|s| normalize(s, &cfg)))
                .collect();
            if let Some(clash) = off.iter().find(|s| on.contains(&normalize(s, &cfg))) {
                return Err(Error::invalid(
                    "gazetteer",
                    format!("{clash:?} is both on-type and contamination for {subtype:?}"),
                ));
            }
        }
        Ok(Gazetteer {
            surfaces,
            contamination,
            targets,
        })
    }

    /// Small clinical gazetteer organised around the curated sub-types of
    /// treatment, problem and test.
    pub fn clinical_demo() -> Self {
        serde_json::from_str(include_str!("../../assets/gazetteer/clinical_demo.json"))
            .expect("bundled gazetteer is valid")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Line {
            path: path.to_path_buf(),
            line: e.line(),
            message: e.to_string(),
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn is_empty(&self) -> bool {
        self.surfaces.is_empty()
    }

    pub fn subtypes(&self) -> impl Iterator<Item = &str> {
        self.surfaces.keys().map(String::as_str)
    }

    fn lookup<'a>(map: &'a BTreeMap<String, Vec<String>>, subtype: &str) -> impl Iterator<Item = &'a str> {
        let subtype = subtype.to_lowercase();
        map.iter()
            .filter(move |(k, _)| k.to_lowercase() == subtype)
            .flat_map(|(_, v)| v.iter().map(String::as_str))
    }

    /// On-type surfaces of a sub-type (case-insensitive lookup).
    pub fn surfaces<'a>(&'a self, subtype: &str) -> impl Iterator<Item = &'a str> {
        Self::lookup(&self.surfaces, subtype)
    }

    /// Off-type surfaces a model might wrongly return for a sub-type.
    pub fn contamination<'a>(&'a self, subtype: &str) -> impl Iterator<Item = &'a str> {
        Self::lookup(&self.contamination, subtype)
    }

    pub fn target_of_subtype(&self, subtype: &str) -> Option<&str> {
        self.targets
            .iter()
            .find(|(k, _)| k.eq_ignore_ascii_case(subtype))
            .map(|(_, v)| v.as_str())
    }

    /// Every on-type surface with its target type, deduplicated by
    /// normalized form. Fails if a surface maps to two different targets.
    pub fn entity_pool(&self) -> Result<Vec<(String, String)>> {
        let cfg = NormalizationConfig::default();
        let mut by_norm: BTreeMap<String, (String, String)> = BTreeMap::new();
        for (subtype, list) in &self.surfaces {
            let Some(target) = self.target_of_subtype(subtype) else {
                continue;
            };
            for s in list {
                let key = normalize(s, &cfg);
                match by_norm.get(&key) {
                    Some((_, t)) if !t.eq_ignore_ascii_case(target) => {
                        return Err(Error::invalid(
                            "gazetteer",
                            format!("{s:?} belongs to both {t:?} and {target:?}"),
                        ))
                    }
                    Some(_) => {}
                    None => {
                        by_norm.insert(key, (s.clone(), target.to_string()));
                    }
                }
            }
        }
        Ok(by_norm.into_values().collect())
    }

    /// Contamination surfaces that are not on-type for any sub-type.
    pub fn distractor_pool(&self) -> Vec<String> {
        let cfg = NormalizationConfig::default();
        let on: BTreeSet<String> = self
            .surfaces
            .values()
            .flatten()
            .map(|s| normalize(s, &cfg))
            .collect();
        let mut seen = BTreeSet::new();
        self.contamination
            .values()
            .flatten()
            .filter(|s| {
                let n = normalize(s, &cfg);
                !on.contains(&n) && seen.insert(n)
            })
            .cloned()
            .collect()
    }

    /// Target types named in the sub-type mapping, sorted.
    pub fn target_types(&self) -> Vec<String> {
        let set: BTreeSet<&str> = self.targets.values().map(String::as_str).collect();
        set.into_iter().map(str::to_string).collect()
    }
}
