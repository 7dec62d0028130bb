//! Per-(incident, factor) extraction.
//!
//! The multistage mode narrows the narrative in three model calls: retrieve
//! candidate sentences per report, verify each grounded candidate, then decide
//! the two-week question over the verified sentences only. The single-prompt
//! modes (end2end, cot, reasoning) are baselines over the concatenated reports.
//! Every task produces a [`StageTrace`] holding the full evidence chain.

mod matching;
mod trace;

use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;
use std::time::Instant;

use futures::stream::{self, Stream, StreamExt};

use crate::backend::{
    parse_payload, BackendError, DecodeParams, ParsedPayload, PayloadError, PromptRequest, SharedBackend,
};
use crate::corpus::{concat_reports, FactorDefinition, FactorRegistry, IncidentRecord, ReportTag};
use crate::prompts::{join_descriptions, render, Bindings, Placeholder, PromptKind};
use crate::segmenter::{segment, SentenceSpan};

pub use matching::match_sentences;
pub use trace::{
    read_traces, read_verdicts, write_traces, write_verdicts, ExtractionVerdict, FailureKind, Mode, ParseErrorPolicy,
    ParseOverride, RetrievedSet, StageFailure, StageResponse, StageTrace, Subject, TaskSpec, TraceIoError,
    TRACE_VERSION,
};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PipelineError {
    #[error("task {0} references an unknown incident")]
    UnknownIncident(String),
    #[error("task references unknown factor `{0}`")]
    UnknownFactor(String),
    #[error("{mode} mode needs a {stage} backend")]
    MissingBackend { mode: Mode, stage: &'static str },
    #[error("parallelism width must be at least 1")]
    ZeroWidth,
}

/// Backends per role. Single-prompt modes use the extractor.
#[derive(Clone, Default)]
pub struct StageBackends {
    pub retriever: Option<SharedBackend>,
    pub examiner: Option<SharedBackend>,
    pub extractor: Option<SharedBackend>,
}

impl StageBackends {
    pub fn uniform(backend: SharedBackend) -> Self {
        Self {
            retriever: Some(backend.clone()),
            examiner: Some(backend.clone()),
            extractor: Some(backend),
        }
    }

    fn check(&self, mode: Mode) -> Result<(), PipelineError> {
        let missing = |stage| Err(PipelineError::MissingBackend { mode, stage });
        if mode == Mode::Multistage {
            if self.retriever.is_none() {
                return missing("retriever");
            }
            if self.examiner.is_none() {
                return missing("examiner");
            }
        }
        if self.extractor.is_none() {
            return missing("extractor");
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub on_parse_error: ParseErrorPolicy,
    /// Store latencies and per-stage wall time. Off keeps traces byte-reproducible.
    pub record_timing: bool,
    pub width: usize,
    pub decode_params: DecodeParams,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            on_parse_error: ParseErrorPolicy::Fail,
            record_timing: false,
            width: 8,
            decode_params: DecodeParams::default(),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct BatchOutcome {
    pub traces: Vec<StageTrace>,
    pub succeeded: usize,
    pub failed: usize,
}

pub struct Pipeline {
    registry: FactorRegistry,
    backends: StageBackends,
    config: PipelineConfig,
}

fn failure_kind(e: &BackendError) -> FailureKind {
    match e {
        BackendError::Transport { .. } => FailureKind::Transport,
        BackendError::Request { .. } => FailureKind::Request,
        BackendError::Envelope { .. } => FailureKind::Envelope,
        BackendError::Cache { .. } => FailureKind::Cache,
        BackendError::Failed { .. } | BackendError::Config(_) => FailureKind::Backend,
    }
}

/// Control flow of a task: a stage error stops the task after recording it.
struct Halt;

struct Run<'a> {
    pipeline: &'a Pipeline,
    factor: &'a FactorDefinition,
    trace: StageTrace,
}

impl Run<'_> {
    fn fail(&mut self, stage: PromptKind, kind: FailureKind, message: String) -> Halt {
        self.trace.error = Some(StageFailure { stage, kind, message });
        self.trace.verdict = None;
        Halt
    }

    fn request(&self, kind: PromptKind, p: Placeholder, value: &str, tag: String) -> PromptRequest {
        let mut req = render(kind, &Bindings::for_factor(self.factor).with(p, value))
            .expect("bindings cover every placeholder");
        req.decode_params = self.pipeline.config.decode_params;
        req.request_tag = tag;
        req
    }

    fn tag(&self, kind: PromptKind, detail: &str) -> String {
        format!("{}/{}/{}{}", self.trace.incident_id, self.trace.factor_id, kind, detail)
    }

    async fn call(
        &mut self,
        backend: &SharedBackend,
        req: &PromptRequest,
        stage: PromptKind,
        subject: Option<Subject>,
    ) -> Result<(usize, String), Halt> {
        let resp = backend
            .complete(req)
            .await
            .map_err(|e| self.fail(stage, failure_kind(&e), e.to_string()))?;
        self.record(req, resp, stage, subject)
    }

    fn record(
        &mut self,
        req: &PromptRequest,
        resp: crate::backend::ModelResponse,
        stage: PromptKind,
        subject: Option<Subject>,
    ) -> Result<(usize, String), Halt> {
        let timing = self.pipeline.config.record_timing;
        self.trace.responses.push(StageResponse {
            stage,
            subject,
            request_hash: req.cache_key(),
            backend_id: resp.backend_id,
            raw_text: resp.raw_text.clone(),
            latency_ms: if timing { resp.latency_ms } else { 0 },
            attempts: resp.attempts,
        });
        Ok((self.trace.responses.len() - 1, resp.raw_text))
    }

    /// Applies the parse-error policy. `Ok(None)` means "treat as negative".
    fn parsed(
        &mut self,
        stage: PromptKind,
        response: usize,
        result: Result<ParsedPayload, PayloadError>,
    ) -> Result<Option<ParsedPayload>, Halt> {
        match result {
            Ok(p) => Ok(Some(p)),
            Err(e) => match self.pipeline.config.on_parse_error {
                ParseErrorPolicy::Fail => Err(self.fail(stage, e.kind.into(), e.message)),
                ParseErrorPolicy::Negative => {
                    self.trace.parse_overrides.push(ParseOverride {
                        response,
                        kind: e.kind.into(),
                        message: e.message,
                    });
                    Ok(None)
                }
            },
        }
    }

    fn time(&mut self, stage: &str, started: Instant) {
        if self.pipeline.config.record_timing {
            *self.trace.timing_ms.entry(stage.to_string()).or_default() += started.elapsed().as_millis() as u64;
        }
    }

    async fn multistage(&mut self, rec: &IncidentRecord) -> Result<bool, Halt> {
        let backends = &self.pipeline.backends;
        let (retriever, examiner, extractor) = (
            backends.retriever.clone().expect("checked"),
            backends.examiner.clone().expect("checked"),
            backends.extractor.clone().expect("checked"),
        );

        let started = Instant::now();
        let mut retrieved: Vec<SentenceSpan> = Vec::new();
        for tag in [ReportTag::Cme, ReportTag::Le] {
            let text = rec.report(tag);
            if text.trim().is_empty() {
                continue;
            }
            let req = self.request(PromptKind::Retrieval, Placeholder::InputReport, text, self.tag(PromptKind::Retrieval, &format!("/{tag}")));
            let (i, raw) = self.call(&retriever, &req, PromptKind::Retrieval, Some(Subject::Report(tag))).await?;
            let candidates = match self.parsed(PromptKind::Retrieval, i, parse_payload(&raw, PromptKind::Retrieval.expected_payload()))? {
                Some(ParsedPayload::SentenceList { values, .. }) => values,
                _ => Vec::new(),
            };
            let spans: Vec<SentenceSpan> = self.trace.sentences.iter().filter(|s| s.report_tag == tag).cloned().collect();
            let (matched, unmatched) = match_sentences(&candidates, &spans);
            self.trace.retrieved.matched.extend(matched.iter().map(SentenceSpan::sentence_ref));
            self.trace.retrieved.unmatched.extend(unmatched);
            retrieved.extend(matched);
        }
        self.time("retrieval", started);

        let started = Instant::now();
        let requests: Vec<(SentenceSpan, PromptRequest)> = retrieved
            .into_iter()
            .map(|span| {
                let tag = self.tag(PromptKind::Verification, &format!("/{}#{}", span.report_tag, span.index));
                let req = self.request(PromptKind::Verification, Placeholder::TargetSentence, &span.text, tag);
                (span, req)
            })
            .collect();
        let answers = futures::future::join_all(requests.iter().map(|(_, req)| examiner.complete(req))).await;
        let mut verified: Vec<SentenceSpan> = Vec::new();
        for ((span, req), answer) in requests.iter().zip(answers) {
            let subject = Some(Subject::Sentence(span.sentence_ref()));
            let resp = answer.map_err(|e| self.fail(PromptKind::Verification, failure_kind(&e), e.to_string()))?;
            let (i, raw) = self.record(req, resp, PromptKind::Verification, subject)?;
            let yes = self
                .parsed(PromptKind::Verification, i, parse_payload(&raw, PromptKind::Verification.expected_payload()))?
                .and_then(|p| p.verdict())
                .unwrap_or(false);
            if yes {
                verified.push(span.clone());
            }
        }
        self.trace.verified = verified.iter().map(SentenceSpan::sentence_ref).collect();
        self.time("verification", started);

        if verified.is_empty() {
            return Ok(false);
        }
        let started = Instant::now();
        let descriptions = join_descriptions(verified.iter().map(|s| s.text.as_str()));
        let req = self.request(PromptKind::Extraction, Placeholder::RelevantDescriptions, &descriptions, self.tag(PromptKind::Extraction, ""));
        let (i, raw) = self.call(&extractor, &req, PromptKind::Extraction, None).await?;
        let verdict = self
            .parsed(PromptKind::Extraction, i, parse_payload(&raw, PromptKind::Extraction.expected_payload()))?
            .and_then(|p| p.verdict())
            .unwrap_or(false);
        self.time("extraction", started);
        Ok(verdict)
    }

    async fn single_prompt(&mut self, rec: &IncidentRecord, kind: PromptKind) -> Result<bool, Halt> {
        let extractor = self.pipeline.backends.extractor.clone().expect("checked");
        let started = Instant::now();
        let context = concat_reports(rec);
        let req = self.request(kind, Placeholder::InputReport, &context, self.tag(kind, ""));
        let (i, raw) = self.call(&extractor, &req, kind, None).await?;
        let parsed = self.parsed(kind, i, parse_payload(&raw, kind.expected_payload()))?;
        if let Some(ParsedPayload::TwoField { sentences, .. }) = &parsed {
            let (matched, unmatched) = match_sentences(sentences, &self.trace.sentences);
            self.trace.retrieved.matched = matched.iter().map(SentenceSpan::sentence_ref).collect();
            self.trace.retrieved.unmatched = unmatched;
        }
        self.time(kind.as_str(), started);
        Ok(parsed.and_then(|p| p.verdict()).unwrap_or(false))
    }
}

impl Pipeline {
    pub fn new(registry: FactorRegistry, backends: StageBackends, config: PipelineConfig) -> Self {
        Self {
            registry,
            backends,
            config,
        }
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn registry(&self) -> &FactorRegistry {
        &self.registry
    }

    fn check(&self, task: &TaskSpec, rec: &IncidentRecord) -> Result<&FactorDefinition, PipelineError> {
        if rec.incident_id != task.incident_id {
            return Err(PipelineError::UnknownIncident(task.incident_id.clone()));
        }
        self.backends.check(task.mode)?;
        self.registry
            .get(&task.factor_id)
            .ok_or_else(|| PipelineError::UnknownFactor(task.factor_id.clone()))
    }

    /// Runs one task in its mode. Stage failures are recorded in the trace;
    /// only configuration problems are returned as errors.
    pub async fn run(&self, task: &TaskSpec, rec: &IncidentRecord) -> Result<StageTrace, PipelineError> {
        let factor = self.check(task, rec)?;
        let mut sentences = segment(ReportTag::Cme, &rec.cme_report);
        sentences.extend(segment(ReportTag::Le, &rec.le_report));
        let mut run = Run {
            pipeline: self,
            factor,
            trace: StageTrace::new(task, sentences),
        };
        let outcome = match task.mode {
            Mode::Multistage => run.multistage(rec).await,
            Mode::End2End => run.single_prompt(rec, PromptKind::End2End).await,
            Mode::Cot => run.single_prompt(rec, PromptKind::Cot).await,
            Mode::Reasoning => run.single_prompt(rec, PromptKind::Reasoning).await,
        };
        if let Ok(v) = outcome {
            run.trace.verdict = Some(v);
        }
        Ok(run.trace)
    }

    pub async fn run_multistage(&self, task: &TaskSpec, rec: &IncidentRecord) -> Result<StageTrace, PipelineError> {
        self.run(&TaskSpec { mode: Mode::Multistage, ..task.clone() }, rec).await
    }

    pub async fn run_end2end(&self, task: &TaskSpec, rec: &IncidentRecord) -> Result<StageTrace, PipelineError> {
        self.run(&TaskSpec { mode: Mode::End2End, ..task.clone() }, rec).await
    }

    pub async fn run_cot(&self, task: &TaskSpec, rec: &IncidentRecord) -> Result<StageTrace, PipelineError> {
        self.run(&TaskSpec { mode: Mode::Cot, ..task.clone() }, rec).await
    }

    pub async fn run_reasoning(&self, task: &TaskSpec, rec: &IncidentRecord) -> Result<StageTrace, PipelineError> {
        self.run(&TaskSpec { mode: Mode::Reasoning, ..task.clone() }, rec).await
    }

    /// Validates every task up front, then runs them with at most
    /// `config.width` in flight. Traces come out ordered by
    /// (incident_id, factor_id, mode) whatever the completion order.
    pub fn run_batch_stream<'a>(
        &'a self,
        mut tasks: Vec<TaskSpec>,
        corpus: &'a [IncidentRecord],
    ) -> Result<impl Stream<Item = StageTrace> + 'a, PipelineError> {
        if self.config.width == 0 {
            return Err(PipelineError::ZeroWidth);
        }
        let by_id: HashMap<&str, &IncidentRecord> = corpus.iter().map(|r| (r.incident_id.as_str(), r)).collect();
        let mut jobs = Vec::with_capacity(tasks.len());
        tasks.sort();
        tasks.dedup();
        for task in tasks {
            let rec = *by_id
                .get(task.incident_id.as_str())
                .ok_or_else(|| PipelineError::UnknownIncident(task.incident_id.clone()))?;
            self.check(&task, rec)?;
            jobs.push((task, rec));
        }
        let width = self.config.width;
        Ok(stream::iter(jobs)
            .map(move |(task, rec)| async move { self.run(&task, rec).await.expect("validated before the batch") })
            .buffered(width))
    }

    pub async fn run_batch(&self, tasks: Vec<TaskSpec>, corpus: &[IncidentRecord]) -> Result<BatchOutcome, PipelineError> {
        let traces: Vec<StageTrace> = self.run_batch_stream(tasks, corpus)?.collect().await;
        let succeeded = traces.iter().filter(|t| t.succeeded()).count();
        Ok(BatchOutcome {
            failed: traces.len() - succeeded,
            succeeded,
            traces,
        })
    }
}

/// Every (incident, factor) pair of `corpus` × `factors` in `mode`.
pub fn all_tasks(corpus: &[IncidentRecord], factors: &[String], mode: Mode) -> Vec<TaskSpec> {
    corpus
        .iter()
        .flat_map(|r| factors.iter().map(move |f| TaskSpec::new(&r.incident_id, f, mode)))
        .collect()
}

/// Verdict lookup keyed by task, for scoring.
pub fn verdict_map(traces: &[StageTrace]) -> BTreeMap<crate::corpus::TaskKey, bool> {
    traces.iter().filter_map(|t| Some((t.key(), t.verdict?))).collect()
}

pub type SharedPipeline = Arc<Pipeline>;
