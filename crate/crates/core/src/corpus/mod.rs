//! Incidents, factor definitions and gold annotations, plus the line-delimited
//! JSON interchange format and the synthetic corpus generator.

mod generator;

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::segmenter;

pub use generator::{
    default_lexicons, generate_corpus, lexicon, temporal_offset, temporal_phrases, GeneratedCorpus,
    GeneratorSpec, PlantedMention, DEFAULT_FACTORS, TWO_WEEK_WINDOW_DAYS,
};

const BUILTIN_REGISTRY: &str = include_str!("../../data/factors.json");

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("line {line}: unknown factor_id `{factor_id}`")]
    UnknownFactor { line: usize, factor_id: String },
    #[error("invalid factor registry: {0}")]
    Registry(String),
    #[error("generator configuration: {0}")]
    Config(String),
    #[error("balanced sample for `{factor_id}`: {reason}")]
    Unbalanceable { factor_id: String, reason: String },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CorpusError + '_ {
    move |source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportTag {
    Cme,
    Le,
}

impl fmt::Display for ReportTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ReportTag::Cme => "cme",
            ReportTag::Le => "le",
        })
    }
}

impl std::str::FromStr for ReportTag {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "cme" => Ok(ReportTag::Cme),
            "le" => Ok(ReportTag::Le),
            other => Err(format!("unknown report `{other}` (expected cme or le)")),
        }
    }
}

/// A sentence identified by report and index into its canonical segmentation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SentenceRef {
    pub report: ReportTag,
    pub index: usize,
}

/// One (incident, factor) unit of work. Orders lexicographically by incident then factor.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TaskKey {
    pub incident_id: String,
    pub factor_id: String,
}

impl TaskKey {
    pub fn new(incident_id: impl Into<String>, factor_id: impl Into<String>) -> Self {
        Self {
            incident_id: incident_id.into(),
            factor_id: factor_id.into(),
        }
    }
}

impl fmt::Display for TaskKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.incident_id, self.factor_id)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FrequencyClass {
    Frequent,
    Infrequent,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FactorDefinition {
    pub factor_id: String,
    pub name: String,
    pub definition: String,
    pub frequency_class: FrequencyClass,
}

/// Ordered set of factor definitions with unique ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FactorRegistry {
    factors: Vec<FactorDefinition>,
}

impl FactorRegistry {
    pub fn new(factors: Vec<FactorDefinition>) -> Result<Self, CorpusError> {
        let mut seen = HashSet::new();
        for f in &factors {
            if f.factor_id.trim().is_empty() {
                return Err(CorpusError::Registry("empty factor_id".into()));
            }
            if f.definition.trim().is_empty() {
                return Err(CorpusError::Registry(format!("`{}` has an empty definition", f.factor_id)));
            }
            if !seen.insert(f.factor_id.as_str()) {
                return Err(CorpusError::Registry(format!("duplicate factor_id `{}`", f.factor_id)));
            }
        }
        Ok(Self { factors })
    }

    /// The eighteen suicide-related factors with their coding-manual definitions.
    pub fn builtin() -> Self {
        Self::from_json(BUILTIN_REGISTRY).expect("builtin registry is valid")
    }

    pub fn from_json(json: &str) -> Result<Self, CorpusError> {
        let factors: Vec<FactorDefinition> =
            serde_json::from_str(json).map_err(|e| CorpusError::Registry(e.to_string()))?;
        Self::new(factors)
    }

    pub fn load(path: &Path) -> Result<Self, CorpusError> {
        Self::from_json(&fs::read_to_string(path).map_err(io_err(path))?)
    }

    pub fn get(&self, factor_id: &str) -> Option<&FactorDefinition> {
        self.factors.iter().find(|f| f.factor_id == factor_id)
    }

    pub fn by_name(&self, name: &str) -> Option<&FactorDefinition> {
        self.factors.iter().find(|f| f.name == name)
    }

    pub fn contains(&self, factor_id: &str) -> bool {
        self.get(factor_id).is_some()
    }

    pub fn iter(&self) -> impl Iterator<Item = &FactorDefinition> {
        self.factors.iter()
    }

    pub fn len(&self) -> usize {
        self.factors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.factors.is_empty()
    }

    /// Registry restricted to `ids`, in the given order.
    pub fn subset(&self, ids: &[String]) -> Result<Self, CorpusError> {
        let factors = ids
            .iter()
            .map(|id| {
                self.get(id)
                    .cloned()
                    .ok_or_else(|| CorpusError::Registry(format!("unknown factor_id `{id}`")))
            })
            .collect::<Result<_, _>>()?;
        Self::new(factors)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IncidentRecord {
    pub incident_id: String,
    #[serde(default)]
    pub cme_report: String,
    #[serde(default)]
    pub le_report: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_labels: Option<BTreeMap<String, bool>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_sentences: Option<BTreeMap<String, Vec<SentenceRef>>>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub metadata: BTreeMap<String, String>,
}

impl IncidentRecord {
    pub fn report(&self, tag: ReportTag) -> &str {
        match tag {
            ReportTag::Cme => &self.cme_report,
            ReportTag::Le => &self.le_report,
        }
    }

    pub fn gold_label(&self, factor_id: &str) -> Option<bool> {
        self.gold_labels.as_ref()?.get(factor_id).copied()
    }

    /// Canonical segmentation of both reports, CME first.
    pub fn sentences(&self) -> Vec<segmenter::SentenceSpan> {
        let mut spans = segmenter::segment(ReportTag::Cme, &self.cme_report);
        spans.extend(segmenter::segment(ReportTag::Le, &self.le_report));
        spans
    }

    fn validate(&self, registry: &FactorRegistry, line: usize) -> Result<(), CorpusError> {
        let malformed = |reason: String| CorpusError::Malformed { line, reason };
        if self.incident_id.trim().is_empty() {
            return Err(malformed("empty incident_id".into()));
        }
        if self.cme_report.trim().is_empty() && self.le_report.trim().is_empty() {
            return Err(malformed(format!(
                "incident `{}` has neither a cme_report nor an le_report",
                self.incident_id
            )));
        }
        let unknown = |factor_id: &String| CorpusError::UnknownFactor {
            line,
            factor_id: factor_id.clone(),
        };
        if let Some(labels) = &self.gold_labels {
            if let Some(id) = labels.keys().find(|id| !registry.contains(id)) {
                return Err(unknown(id));
            }
        }
        if let Some(sentences) = &self.gold_sentences {
            let counts = [
                (ReportTag::Cme, segmenter::segment(ReportTag::Cme, &self.cme_report).len()),
                (ReportTag::Le, segmenter::segment(ReportTag::Le, &self.le_report).len()),
            ];
            for (id, refs) in sentences {
                if !registry.contains(id) {
                    return Err(unknown(id));
                }
                for r in refs {
                    let n = counts.iter().find(|(t, _)| *t == r.report).map_or(0, |c| c.1);
                    if r.index >= n {
                        return Err(malformed(format!(
                            "gold sentence {}#{} for `{id}` is out of range ({n} sentences)",
                            r.report, r.index
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Parses and validates a corpus from line-delimited JSON text.
pub fn parse_corpus(text: &str, registry: &FactorRegistry) -> Result<Vec<IncidentRecord>, CorpusError> {
    let mut out = Vec::new();
    let mut ids = HashSet::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let rec: IncidentRecord = serde_json::from_str(raw).map_err(|e| CorpusError::Malformed {
            line,
            reason: e.to_string(),
        })?;
        rec.validate(registry, line)?;
        if !ids.insert(rec.incident_id.clone()) {
            return Err(CorpusError::Malformed {
                line,
                reason: format!("duplicate incident_id `{}`", rec.incident_id),
            });
        }
        out.push(rec);
    }
    Ok(out)
}

pub fn load_corpus(path: &Path, registry: &FactorRegistry) -> Result<Vec<IncidentRecord>, CorpusError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    parse_corpus(&text, registry)
}

/// Canonical serialization: one compact JSON object per line, `\n` terminated.
pub fn corpus_to_string(records: &[IncidentRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("records serialize"));
        out.push('\n');
    }
    out
}

pub fn write_corpus(path: &Path, records: &[IncidentRecord]) -> Result<(), CorpusError> {
    fs::write(path, corpus_to_string(records)).map_err(io_err(path))
}

const REPORT_SEPARATOR: &str = "\n\n";

/// Joins both reports with the shorter one first, separated by one blank line.
/// Equal lengths put the CME report first; an empty report is dropped with its separator.
pub fn concat_reports(rec: &IncidentRecord) -> String {
    let (cme, le) = (rec.cme_report.as_str(), rec.le_report.as_str());
    match (cme.is_empty(), le.is_empty()) {
        (true, true) => String::new(),
        (false, true) => cme.to_string(),
        (true, false) => le.to_string(),
        (false, false) => {
            let (first, second) = if le.chars().count() < cme.chars().count() {
                (le, cme)
            } else {
                (cme, le)
            };
            [first, REPORT_SEPARATOR, second].concat()
        }
    }
}

/// Draws a class-balanced sample for one factor. Both classes are capped at
/// `min(per_class, #positives, #negatives)`.
pub fn balanced_sample(
    records: &[IncidentRecord],
    factor_id: &str,
    per_class: usize,
    seed: u64,
) -> Result<Vec<IncidentRecord>, CorpusError> {
    let err = |reason: &str| CorpusError::Unbalanceable {
        factor_id: factor_id.to_string(),
        reason: reason.to_string(),
    };
    if per_class == 0 {
        return Err(err("per_class must be positive"));
    }
    let mut seen = HashSet::new();
    let (mut pos, mut neg): (Vec<&IncidentRecord>, Vec<&IncidentRecord>) = (Vec::new(), Vec::new());
    for r in records {
        if !seen.insert(r.incident_id.as_str()) {
            continue;
        }
        match r.gold_label(factor_id) {
            Some(true) => pos.push(r),
            Some(false) => neg.push(r),
            None => {}
        }
    }
    if pos.is_empty() {
        return Err(err("no positive instances"));
    }
    if neg.is_empty() {
        return Err(err("no negative instances"));
    }
    let n = per_class.min(pos.len()).min(neg.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    pos.shuffle(&mut rng);
    neg.shuffle(&mut rng);
    let mut out: Vec<IncidentRecord> = pos[..n].iter().chain(&neg[..n]).map(|r| (*r).clone()).collect();
    out.shuffle(&mut rng);
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Relevance {
    Relevant,
    NotRelevant,
}

/// Sentence-level relevance gold, keyed by task then sentence.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct GoldRelevanceSet {
    labels: BTreeMap<TaskKey, BTreeMap<SentenceRef, Relevance>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RelevanceLine {
    incident_id: String,
    factor_id: String,
    report: ReportTag,
    index: usize,
    label: Relevance,
}

impl GoldRelevanceSet {
    pub fn insert(&mut self, key: TaskKey, sentence: SentenceRef, label: Relevance) {
        self.labels.entry(key).or_default().insert(sentence, label);
    }

    pub fn get(&self, key: &TaskKey) -> Option<&BTreeMap<SentenceRef, Relevance>> {
        self.labels.get(key)
    }

    pub fn keys(&self) -> impl Iterator<Item = &TaskKey> {
        self.labels.keys()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&TaskKey, &BTreeMap<SentenceRef, Relevance>)> {
        self.labels.iter()
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn relevant(&self, key: &TaskKey) -> BTreeSet<SentenceRef> {
        self.get(key)
            .map(|m| m.iter().filter(|(_, l)| **l == Relevance::Relevant).map(|(s, _)| *s).collect())
            .unwrap_or_default()
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for (key, sentences) in &self.labels {
            for (s, label) in sentences {
                let line = RelevanceLine {
                    incident_id: key.incident_id.clone(),
                    factor_id: key.factor_id.clone(),
                    report: s.report,
                    index: s.index,
                    label: *label,
                };
                out.push_str(&serde_json::to_string(&line).expect("serializable"));
                out.push('\n');
            }
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<(), CorpusError> {
        let mut f = fs::File::create(path).map_err(io_err(path))?;
        f.write_all(self.to_jsonl().as_bytes()).map_err(io_err(path))
    }

    pub fn load(path: &Path) -> Result<Self, CorpusError> {
        let f = fs::File::open(path).map_err(io_err(path))?;
        let mut set = Self::default();
        for (i, line) in BufReader::new(f).lines().enumerate() {
            let line_no = i + 1;
            let line = line.map_err(io_err(path))?;
            if line.trim().is_empty() {
                continue;
            }
            let l: RelevanceLine = serde_json::from_str(&line).map_err(|e| CorpusError::Malformed {
                line: line_no,
                reason: e.to_string(),
            })?;
            set.insert(
                TaskKey::new(l.incident_id, l.factor_id),
                SentenceRef {
                    report: l.report,
                    index: l.index,
                },
                l.label,
            );
        }
        Ok(set)
    }

    /// Checks that every labeled sentence resolves to a real sentence of its incident.
    pub fn validate(&self, records: &[IncidentRecord]) -> Result<(), CorpusError> {
        let by_id: BTreeMap<&str, &IncidentRecord> =
            records.iter().map(|r| (r.incident_id.as_str(), r)).collect();
        for (key, sentences) in &self.labels {
            let rec = by_id.get(key.incident_id.as_str()).ok_or_else(|| CorpusError::Malformed {
                line: 0,
                reason: format!("relevance gold references unknown incident `{}`", key.incident_id),
            })?;
            for s in sentences.keys() {
                let n = segmenter::segment(s.report, rec.report(s.report)).len();
                if s.index >= n {
                    return Err(CorpusError::Malformed {
                        line: 0,
                        reason: format!("relevance gold {key} {}#{} out of range", s.report, s.index),
                    });
                }
            }
        }
        Ok(())
    }
}
