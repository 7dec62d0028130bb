//! Extraction metrics, inter-annotator agreement and stage-wise retrieval accuracy.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{GoldRelevanceSet, IncidentRecord, Relevance, SentenceRef, TaskKey};
use crate::pipeline::{ExtractionVerdict, Mode, StageTrace};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum EvalError {
    #[error("no task has both a prediction and a gold label")]
    EmptyIntersection,
    #[error("{} prediction(s) have no gold label, first: {}", .0.len(), .0[0])]
    UnknownPredictions(Vec<TaskKey>),
    #[error("label vectors differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("label vectors are empty")]
    EmptyLabels,
    #[error("{} traced pair(s) have no gold relevance labels: {}", .0.len(), join_keys(.0))]
    MissingGold(Vec<TaskKey>),
    #[error("no multistage traces to score")]
    NoTraces,
    #[error("unknown report format `{0}` (expected json or text)")]
    UnknownFormat(String),
}

fn join_keys(keys: &[TaskKey]) -> String {
    let shown: Vec<String> = keys.iter().take(5).map(TaskKey::to_string).collect();
    let more = if keys.len() > 5 { format!(" and {} more", keys.len() - 5) } else { String::new() };
    format!("{}{more}", shown.join(", "))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    pub fn add(&mut self, pred: bool, gold: bool) {
        match (pred, gold) {
            (true, true) => self.tp += 1,
            (true, false) => self.fp += 1,
            (false, true) => self.fn_ += 1,
            (false, false) => self.tn += 1,
        }
    }

    /// The same table with the negative class treated as positive.
    pub fn flipped(&self) -> Self {
        Self {
            tp: self.tn,
            fp: self.fn_,
            fn_: self.fp,
            tn: self.tp,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub accuracy: f64,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Positive-class precision, recall, F1 and accuracy. Empty denominators give 0.
pub fn prf1(c: &ConfusionCounts) -> Metrics {
    let precision = ratio(c.tp, c.tp + c.fp);
    let recall = ratio(c.tp, c.tp + c.fn_);
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Metrics {
        precision,
        recall,
        f1,
        accuracy: ratio(c.tp + c.tn, c.total()),
    }
}

/// Mean of the positive-class and negative-class F1.
pub fn two_class_macro_f1(c: &ConfusionCounts) -> f64 {
    (prf1(c).f1 + prf1(&c.flipped()).f1) / 2.0
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryScore {
    pub counts: ConfusionCounts,
    /// Gold tasks without a prediction; not counted.
    pub missing: Vec<TaskKey>,
}

pub fn score_binary(pred: &BTreeMap<TaskKey, bool>, gold: &BTreeMap<TaskKey, bool>) -> Result<BinaryScore, EvalError> {
    let unknown: Vec<TaskKey> = pred.keys().filter(|k| !gold.contains_key(k)).cloned().collect();
    if !unknown.is_empty() {
        return Err(EvalError::UnknownPredictions(unknown));
    }
    let mut counts = ConfusionCounts::default();
    let mut missing = Vec::new();
    for (key, &g) in gold {
        match pred.get(key) {
            Some(&p) => counts.add(p, g),
            None => missing.push(key.clone()),
        }
    }
    if counts.total() == 0 {
        return Err(EvalError::EmptyIntersection);
    }
    Ok(BinaryScore { counts, missing })
}

pub fn cohens_kappa(a: &[bool], b: &[bool]) -> Result<f64, EvalError> {
    if a.len() != b.len() {
        return Err(EvalError::LengthMismatch(a.len(), b.len()));
    }
    if a.is_empty() {
        return Err(EvalError::EmptyLabels);
    }
    let n = a.len() as f64;
    let agree = a.iter().zip(b).filter(|(x, y)| x == y).count() as f64;
    let a_true = a.iter().filter(|x| **x).count() as f64 / n;
    let b_true = b.iter().filter(|x| **x).count() as f64 / n;
    let p_o = agree / n;
    let p_e = a_true * b_true + (1.0 - a_true) * (1.0 - b_true);
    if p_e == 1.0 {
        return Ok(1.0);
    }
    Ok((p_o - p_e) / (1.0 - p_e))
}

/// Pairs two labelings on the tasks they share, in key order.
pub fn paired_labels(a: &BTreeMap<TaskKey, bool>, b: &BTreeMap<TaskKey, bool>) -> (Vec<bool>, Vec<bool>) {
    a.iter().filter_map(|(k, &x)| Some((x, *b.get(k)?))).unzip()
}

/// Incident-level gold labels of a corpus.
pub fn gold_labels(records: &[IncidentRecord]) -> BTreeMap<TaskKey, bool> {
    records
        .iter()
        .flat_map(|r| {
            r.gold_labels
                .iter()
                .flatten()
                .map(|(f, &v)| (TaskKey::new(&r.incident_id, f), v))
        })
        .collect()
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RunMetadata {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub corpus_hash: Option<String>,
    #[serde(default)]
    pub backend_ids: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub timestamp: String,
}

impl RunMetadata {
    pub fn now() -> Self {
        Self {
            timestamp: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorModeScore {
    pub factor_id: String,
    pub mode: Mode,
    pub counts: ConfusionCounts,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub accuracy: f64,
    pub macro_f1: f64,
    /// Tasks whose pipeline run failed.
    pub failed: u64,
    /// Gold tasks with no outcome at all.
    pub missing: u64,
}

impl FactorModeScore {
    fn new(factor_id: &str, mode: Mode, counts: ConfusionCounts, failed: u64, missing: u64) -> Self {
        let m = prf1(&counts);
        Self {
            factor_id: factor_id.to_string(),
            mode,
            counts,
            precision: m.precision,
            recall: m.recall,
            f1: m.f1,
            accuracy: m.accuracy,
            macro_f1: two_class_macro_f1(&counts),
            failed,
            missing,
        }
    }

    pub fn failure_rate(&self) -> f64 {
        ratio(self.failed, self.failed + self.counts.total())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeAverage {
    pub mode: Mode,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub accuracy: f64,
    pub macro_f1: f64,
    pub failed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub rows: Vec<FactorModeScore>,
    /// Unweighted means over factors, per mode.
    pub averages: Vec<ModeAverage>,
    pub metadata: RunMetadata,
}

/// One pipeline result as eval sees it. `None` marks a failed task.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Outcome {
    pub key: TaskKey,
    pub mode: Mode,
    pub verdict: Option<bool>,
}

impl From<&StageTrace> for Outcome {
    fn from(t: &StageTrace) -> Self {
        Self {
            key: t.key(),
            mode: t.mode,
            verdict: t.verdict,
        }
    }
}

impl From<&ExtractionVerdict> for Outcome {
    fn from(v: &ExtractionVerdict) -> Self {
        Self {
            key: TaskKey::new(&v.incident_id, &v.factor_id),
            mode: v.mode,
            verdict: Some(v.value),
        }
    }
}

impl EvalReport {
    /// Scores outcomes per (factor, mode) against the gold labels of that factor.
    pub fn build(
        outcomes: impl IntoIterator<Item = Outcome>,
        gold: &BTreeMap<TaskKey, bool>,
        metadata: RunMetadata,
    ) -> Result<Self, EvalError> {
        type Group = (BTreeMap<TaskKey, bool>, BTreeSet<TaskKey>);
        let mut groups: BTreeMap<(String, Mode), Group> = BTreeMap::new();
        for o in outcomes {
            let (pred, failed) = groups.entry((o.key.factor_id.clone(), o.mode)).or_default();
            match o.verdict {
                Some(v) => {
                    pred.insert(o.key, v);
                }
                None => {
                    failed.insert(o.key);
                }
            }
        }
        let mut rows = Vec::new();
        for ((factor, mode), (pred, failed)) in &groups {
            let factor_gold: BTreeMap<TaskKey, bool> =
                gold.iter().filter(|(k, _)| &k.factor_id == factor).map(|(k, v)| (k.clone(), *v)).collect();
            let counts = if pred.is_empty() {
                ConfusionCounts::default()
            } else {
                score_binary(pred, &factor_gold)?.counts
            };
            let missing = factor_gold
                .keys()
                .filter(|k| !pred.contains_key(*k) && !failed.contains(*k))
                .count() as u64;
            rows.push(FactorModeScore::new(factor, *mode, counts, failed.len() as u64, missing));
        }
        if rows.iter().all(|r| r.counts.total() == 0) {
            return Err(EvalError::EmptyIntersection);
        }
        let averages = averages(&rows);
        Ok(Self { rows, averages, metadata })
    }

    pub fn from_traces(traces: &[StageTrace], gold: &BTreeMap<TaskKey, bool>, metadata: RunMetadata) -> Result<Self, EvalError> {
        Self::build(traces.iter().map(Outcome::from), gold, metadata)
    }

    pub fn from_verdicts(
        verdicts: &[ExtractionVerdict],
        gold: &BTreeMap<TaskKey, bool>,
        metadata: RunMetadata,
    ) -> Result<Self, EvalError> {
        Self::build(verdicts.iter().map(Outcome::from), gold, metadata)
    }

    pub fn row(&self, factor_id: &str, mode: Mode) -> Option<&FactorModeScore> {
        self.rows.iter().find(|r| r.factor_id == factor_id && r.mode == mode)
    }

    pub fn modes(&self) -> Vec<Mode> {
        let set: BTreeSet<Mode> = self.rows.iter().map(|r| r.mode).collect();
        set.into_iter().collect()
    }

    pub fn factors(&self) -> Vec<String> {
        let set: BTreeSet<&str> = self.rows.iter().map(|r| r.factor_id.as_str()).collect();
        set.into_iter().map(String::from).collect()
    }

    pub fn max_failure_rate(&self) -> f64 {
        self.rows.iter().map(FactorModeScore::failure_rate).fold(0.0, f64::max)
    }
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

fn averages(rows: &[FactorModeScore]) -> Vec<ModeAverage> {
    let modes: BTreeSet<Mode> = rows.iter().map(|r| r.mode).collect();
    modes
        .into_iter()
        .map(|mode| {
            let of = || rows.iter().filter(move |r| r.mode == mode && r.counts.total() > 0);
            ModeAverage {
                mode,
                precision: mean(of().map(|r| r.precision)),
                recall: mean(of().map(|r| r.recall)),
                f1: mean(of().map(|r| r.f1)),
                accuracy: mean(of().map(|r| r.accuracy)),
                macro_f1: mean(of().map(|r| r.macro_f1)),
                failed: rows.iter().filter(|r| r.mode == mode).map(|r| r.failed).sum(),
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Text,
}

impl FromStr for ReportFormat {
    type Err = EvalError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "json" => Ok(Self::Json),
            "text" | "txt" => Ok(Self::Text),
            other => Err(EvalError::UnknownFormat(other.to_string())),
        }
    }
}

fn table(header: Vec<String>, body: Vec<Vec<String>>) -> String {
    let widths: Vec<usize> = (0..header.len())
        .map(|i| std::iter::once(&header).chain(&body).map(|r| r[i].chars().count()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    let mut line = |cells: &[String]| {
        let padded: Vec<String> = cells
            .iter()
            .enumerate()
            .map(|(i, c)| if i == 0 { format!("{c:<w$}", w = widths[i]) } else { format!("{c:>w$}", w = widths[i]) })
            .collect();
        let _ = writeln!(out, "{}", padded.join("  ").trim_end());
    };
    line(&header);
    line(&widths.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>());
    for row in &body {
        line(row);
    }
    out
}

pub fn render_report(report: &EvalReport, format: ReportFormat) -> String {
    match format {
        ReportFormat::Json => serde_json::to_string_pretty(report).expect("report serializes") + "\n",
        ReportFormat::Text => {
            let modes = report.modes();
            let mut header = vec!["factor".to_string()];
            for m in &modes {
                for col in ["P", "R", "F1", "mF1", "failed"] {
                    header.push(format!("{m} {col}"));
                }
            }
            let f = |v: f64| format!("{v:.3}");
            let mut body = Vec::new();
            for factor in report.factors() {
                let mut row = vec![factor.clone()];
                for m in &modes {
                    match report.row(&factor, *m) {
                        Some(r) => row.extend([f(r.precision), f(r.recall), f(r.f1), f(r.macro_f1), r.failed.to_string()]),
                        None => row.extend(std::iter::repeat_n("-".to_string(), 5)),
                    }
                }
                body.push(row);
            }
            let mut avg = vec!["average".to_string()];
            for m in &modes {
                let a = report.averages.iter().find(|a| a.mode == *m).expect("average per mode");
                avg.extend([f(a.precision), f(a.recall), f(a.f1), f(a.macro_f1), a.failed.to_string()]);
            }
            body.push(avg);
            table(header, body)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct StageCounts {
    /// Gold-relevant sentences present in the stage's set.
    pub hit: u64,
    /// Gold-relevant sentences absent from it.
    pub missed: u64,
    /// Gold-not-relevant sentences present in it.
    pub spurious: u64,
    /// Gold-not-relevant sentences absent from it.
    pub rejected: u64,
}

impl StageCounts {
    fn add(&mut self, present: bool, label: Relevance) {
        match (present, label) {
            (true, Relevance::Relevant) => self.hit += 1,
            (false, Relevance::Relevant) => self.missed += 1,
            (true, Relevance::NotRelevant) => self.spurious += 1,
            (false, Relevance::NotRelevant) => self.rejected += 1,
        }
    }

    pub fn labeled(&self) -> u64 {
        self.hit + self.missed + self.spurious + self.rejected
    }

    pub fn accuracy(&self) -> f64 {
        ratio(self.hit + self.rejected, self.labeled())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorRetrieval {
    pub factor_id: String,
    pub stage1_accuracy: f64,
    pub stage2_accuracy: f64,
    pub stage1: StageCounts,
    pub stage2: StageCounts,
    pub tasks: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalAccuracyReport {
    pub factors: Vec<FactorRetrieval>,
    pub mean_stage1: f64,
    pub mean_stage2: f64,
    pub mean_improvement: f64,
    /// Failed multistage traces left out of the counts.
    pub skipped_failed: u64,
}

/// Sentence-level accuracy of the retrieved (stage 1) and verified (stage 2)
/// sets of multistage traces against gold relevance labels.
pub fn retrieval_accuracy(traces: &[StageTrace], gold: &GoldRelevanceSet) -> Result<RetrievalAccuracyReport, EvalError> {
    let multistage: Vec<&StageTrace> = traces.iter().filter(|t| t.mode == Mode::Multistage).collect();
    if multistage.is_empty() {
        return Err(EvalError::NoTraces);
    }
    let missing: Vec<TaskKey> = multistage.iter().map(|t| t.key()).filter(|k| gold.get(k).is_none()).collect();
    if !missing.is_empty() {
        return Err(EvalError::MissingGold(missing));
    }
    let mut per: BTreeMap<String, (StageCounts, StageCounts, u64)> = BTreeMap::new();
    let mut skipped_failed = 0;
    for t in multistage {
        if !t.succeeded() {
            skipped_failed += 1;
            continue;
        }
        let labels = gold.get(&t.key()).expect("checked above");
        let retrieved: BTreeSet<&SentenceRef> = t.retrieved.matched.iter().collect();
        let verified: BTreeSet<&SentenceRef> = t.verified.iter().collect();
        let (s1, s2, n) = per.entry(t.factor_id.clone()).or_default();
        *n += 1;
        for (sentence, &label) in labels {
            s1.add(retrieved.contains(sentence), label);
            s2.add(verified.contains(sentence), label);
        }
    }
    let factors: Vec<FactorRetrieval> = per
        .into_iter()
        .map(|(factor_id, (stage1, stage2, tasks))| FactorRetrieval {
            factor_id,
            stage1_accuracy: stage1.accuracy(),
            stage2_accuracy: stage2.accuracy(),
            stage1,
            stage2,
            tasks,
        })
        .collect();
    let mean_stage1 = mean(factors.iter().map(|f| f.stage1_accuracy));
    let mean_stage2 = mean(factors.iter().map(|f| f.stage2_accuracy));
    Ok(RetrievalAccuracyReport {
        factors,
        mean_stage1,
        mean_stage2,
        mean_improvement: mean_stage2 - mean_stage1,
        skipped_failed,
    })
}

pub fn render_retrieval(report: &RetrievalAccuracyReport, format: ReportFormat) -> String {
    match format {
        ReportFormat::Json => serde_json::to_string_pretty(report).expect("report serializes") + "\n",
        ReportFormat::Text => {
            let header = ["factor", "stage1", "stage2", "hit", "missed", "spurious", "hit2", "missed2", "spurious2"]
                .map(String::from)
                .to_vec();
            let f = |v: f64| format!("{v:.3}");
            let mut body: Vec<Vec<String>> = report
                .factors
                .iter()
                .map(|r| {
                    vec![
                        r.factor_id.clone(),
                        f(r.stage1_accuracy),
                        f(r.stage2_accuracy),
                        r.stage1.hit.to_string(),
                        r.stage1.missed.to_string(),
                        r.stage1.spurious.to_string(),
                        r.stage2.hit.to_string(),
                        r.stage2.missed.to_string(),
                        r.stage2.spurious.to_string(),
                    ]
                })
                .collect();
            let mut avg = vec!["average".to_string(), f(report.mean_stage1), f(report.mean_stage2)];
            avg.extend(std::iter::repeat_n(String::new(), 6));
            body.push(avg);
            table(header, body)
        }
    }
}
