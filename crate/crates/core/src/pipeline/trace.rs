use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::backend::{parse_payload, PayloadErrorKind};
use crate::corpus::{SentenceRef, TaskKey};
use crate::prompts::PromptKind;
use crate::segmenter::SentenceSpan;

pub const TRACE_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Multistage,
    End2End,
    Cot,
    Reasoning,
}

impl Mode {
    pub const ALL: [Mode; 4] = [Mode::Multistage, Mode::End2End, Mode::Cot, Mode::Reasoning];

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Multistage => "multistage",
            Mode::End2End => "end2end",
            Mode::Cot => "cot",
            Mode::Reasoning => "reasoning",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Mode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| format!("unknown mode `{s}` (expected multistage, end2end, cot or reasoning)"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParseErrorPolicy {
    /// A stage whose answer cannot be parsed fails the task.
    #[default]
    Fail,
    /// Unparseable answers count as negative (empty list / false) and are logged in the trace.
    Negative,
}

impl FromStr for ParseErrorPolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "fail" => Ok(Self::Fail),
            "negative" => Ok(Self::Negative),
            other => Err(format!("unknown parse-error policy `{other}` (expected fail or negative)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TaskSpec {
    pub incident_id: String,
    pub factor_id: String,
    pub mode: Mode,
}

impl TaskSpec {
    pub fn new(incident_id: impl Into<String>, factor_id: impl Into<String>, mode: Mode) -> Self {
        Self {
            incident_id: incident_id.into(),
            factor_id: factor_id.into(),
            mode,
        }
    }

    pub fn key(&self) -> TaskKey {
        TaskKey::new(&self.incident_id, &self.factor_id)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageResponse {
    pub stage: PromptKind,
    /// Report for retrieval calls, sentence for verification calls.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subject: Option<Subject>,
    pub request_hash: String,
    pub backend_id: String,
    pub raw_text: String,
    pub latency_ms: u64,
    pub attempts: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Subject {
    Report(crate::corpus::ReportTag),
    Sentence(SentenceRef),
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RetrievedSet {
    pub matched: Vec<SentenceRef>,
    /// Model output that could not be grounded in the source text. Never verified.
    pub unmatched: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureKind {
    Transport,
    Request,
    Envelope,
    Cache,
    Backend,
    Parse,
    MissingKey,
    Coercion,
}

impl From<PayloadErrorKind> for FailureKind {
    fn from(k: PayloadErrorKind) -> Self {
        match k {
            PayloadErrorKind::Parse => FailureKind::Parse,
            PayloadErrorKind::MissingKey => FailureKind::MissingKey,
            PayloadErrorKind::Coercion => FailureKind::Coercion,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageFailure {
    pub stage: PromptKind,
    pub kind: FailureKind,
    pub message: String,
}

/// A parse failure that the `negative` policy turned into a negative answer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParseOverride {
    /// Index into `responses`.
    pub response: usize,
    pub kind: FailureKind,
    pub message: String,
}

/// The evidence chain of one (incident, factor) task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTrace {
    pub trace_version: u32,
    pub incident_id: String,
    pub factor_id: String,
    pub mode: Mode,
    pub sentences: Vec<SentenceSpan>,
    pub retrieved: RetrievedSet,
    pub verified: Vec<SentenceRef>,
    pub responses: Vec<StageResponse>,
    pub verdict: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<StageFailure>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub parse_overrides: Vec<ParseOverride>,
    /// Wall time per stage in milliseconds; empty unless timing was recorded.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub timing_ms: BTreeMap<String, u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractionVerdict {
    pub incident_id: String,
    pub factor_id: String,
    pub mode: Mode,
    pub value: bool,
}

impl StageTrace {
    pub fn new(task: &TaskSpec, sentences: Vec<SentenceSpan>) -> Self {
        Self {
            trace_version: TRACE_VERSION,
            incident_id: task.incident_id.clone(),
            factor_id: task.factor_id.clone(),
            mode: task.mode,
            sentences,
            retrieved: RetrievedSet::default(),
            verified: Vec::new(),
            responses: Vec::new(),
            verdict: None,
            error: None,
            parse_overrides: Vec::new(),
            timing_ms: BTreeMap::new(),
        }
    }

    pub fn key(&self) -> TaskKey {
        TaskKey::new(&self.incident_id, &self.factor_id)
    }

    pub fn succeeded(&self) -> bool {
        self.error.is_none() && self.verdict.is_some()
    }

    pub fn calls(&self, stage: PromptKind) -> usize {
        self.responses.iter().filter(|r| r.stage == stage).count()
    }

    pub fn extraction_verdict(&self) -> Option<ExtractionVerdict> {
        Some(ExtractionVerdict {
            incident_id: self.incident_id.clone(),
            factor_id: self.factor_id.clone(),
            mode: self.mode,
            value: self.verdict?,
        })
    }

    pub fn span(&self, r: &SentenceRef) -> Option<&SentenceSpan> {
        self.sentences.iter().find(|s| s.report_tag == r.report && s.index == r.index)
    }

    /// Recomputes the verdict from the stored raw responses alone.
    pub fn recompute_verdict(&self) -> Option<bool> {
        if self.error.is_some() {
            return None;
        }
        let overridden = |i: usize| self.parse_overrides.iter().any(|o| o.response == i);
        let decide = |stage: PromptKind| -> Option<bool> {
            let (i, r) = self.responses.iter().enumerate().rev().find(|(_, r)| r.stage == stage)?;
            if overridden(i) {
                return Some(false);
            }
            parse_payload(&r.raw_text, stage.expected_payload()).ok()?.verdict()
        };
        match self.mode {
            Mode::Multistage => {
                let verified: Vec<SentenceRef> = self
                    .responses
                    .iter()
                    .enumerate()
                    .filter(|(_, r)| r.stage == PromptKind::Verification)
                    .filter_map(|(i, r)| {
                        let Some(Subject::Sentence(s)) = r.subject else { return None };
                        let yes = !overridden(i)
                            && parse_payload(&r.raw_text, PromptKind::Verification.expected_payload())
                                .ok()?
                                .verdict()?;
                        yes.then_some(s)
                    })
                    .collect();
                if verified.is_empty() {
                    Some(false)
                } else {
                    decide(PromptKind::Extraction)
                }
            }
            Mode::End2End => decide(PromptKind::End2End),
            Mode::Cot => decide(PromptKind::Cot),
            Mode::Reasoning => decide(PromptKind::Reasoning),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum TraceIoError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path} line {line}: {message}")]
    Malformed { path: String, line: usize, message: String },
}

fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>, TraceIoError> {
    let shown = path.display().to_string();
    let file = std::fs::File::open(path).map_err(|source| TraceIoError::Io {
        path: shown.clone(),
        source,
    })?;
    let mut out = Vec::new();
    for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|source| TraceIoError::Io {
            path: shown.clone(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| TraceIoError::Malformed {
            path: shown.clone(),
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

fn write_jsonl<T: Serialize>(path: &Path, items: impl IntoIterator<Item = T>) -> Result<(), TraceIoError> {
    let err = |source| TraceIoError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut w = std::io::BufWriter::new(std::fs::File::create(path).map_err(err)?);
    for item in items {
        serde_json::to_writer(&mut w, &item).expect("serializable");
        w.write_all(b"\n").map_err(err)?;
    }
    w.flush().map_err(err)
}

pub fn read_traces(path: &Path) -> Result<Vec<StageTrace>, TraceIoError> {
    let traces: Vec<StageTrace> = read_jsonl(path)?;
    if let Some((i, t)) = traces.iter().enumerate().find(|(_, t)| t.trace_version != TRACE_VERSION) {
        return Err(TraceIoError::Malformed {
            path: path.display().to_string(),
            line: i + 1,
            message: format!("unsupported trace_version {}", t.trace_version),
        });
    }
    Ok(traces)
}

pub fn write_traces<'a>(path: &Path, traces: impl IntoIterator<Item = &'a StageTrace>) -> Result<(), TraceIoError> {
    write_jsonl(path, traces)
}

pub fn read_verdicts(path: &Path) -> Result<Vec<ExtractionVerdict>, TraceIoError> {
    read_jsonl(path)
}

pub fn write_verdicts<'a>(path: &Path, traces: impl IntoIterator<Item = &'a StageTrace>) -> Result<(), TraceIoError> {
    write_jsonl(path, traces.into_iter().filter_map(StageTrace::extraction_verdict))
}
