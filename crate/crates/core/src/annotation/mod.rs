//! Two-arm annotation study service.
//!
//! Each annotator labels the same (incident, factor) items twice: first in the
//! control arm with plain reports, then, after a minimum gap, in the
//! intervention arm with the pipeline's verified sentences highlighted. The
//! server stamps every serve and submit with its own clock, so elapsed time is
//! never client-reported. All state lives in an append-only event log.

mod http;
mod report;
mod store;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::Mutex;

use chrono::{DateTime, Duration, Utc};
use serde::{Deserialize, Serialize};

pub use http::{router, serve};
pub use report::{study_report, ArmReport, QuestionDistribution, StudyReport};
pub use store::{AnnotationService, StoreEvent, StudyData};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arm {
    Control,
    Intervention,
}

impl Arm {
    pub fn as_str(self) -> &'static str {
        match self {
            Arm::Control => "control",
            Arm::Intervention => "intervention",
        }
    }
}

impl fmt::Display for Arm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Arm {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "control" => Ok(Arm::Control),
            "intervention" => Ok(Arm::Intervention),
            other => Err(format!("unknown arm `{other}`")),
        }
    }
}

pub const DEFAULT_MIN_ARM_GAP_SECS: u64 = 24 * 60 * 60;

fn default_gap() -> u64 {
    DEFAULT_MIN_ARM_GAP_SECS
}

fn default_true() -> bool {
    true
}

/// Study definition. Items are every (incident, factor) pair; the control arm
/// always comes first.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyConfig {
    /// Assigned by the server when omitted.
    #[serde(default)]
    pub study_id: Option<String>,
    pub factors: Vec<String>,
    pub incidents: Vec<String>,
    #[serde(default = "default_gap")]
    pub min_arm_gap_secs: u64,
    /// Highlight verified sentences in the intervention arm.
    #[serde(default = "default_true")]
    pub highlights: bool,
    #[serde(default)]
    pub seed: u64,
}

impl StudyConfig {
    pub fn new(factors: Vec<String>, incidents: Vec<String>, seed: u64) -> Self {
        Self {
            study_id: None,
            factors,
            incidents,
            min_arm_gap_secs: DEFAULT_MIN_ARM_GAP_SECS,
            highlights: true,
            seed,
        }
    }

    pub fn min_arm_gap(&self) -> Duration {
        Duration::seconds(self.min_arm_gap_secs as i64)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ItemKey {
    pub incident_id: String,
    pub factor_id: String,
}

/// A stored decision with server timestamps.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationEvent {
    pub session_id: String,
    pub annotator_id: String,
    pub arm: Arm,
    pub incident_id: String,
    pub factor_id: String,
    pub decision: bool,
    pub served_at: DateTime<Utc>,
    pub submitted_at: DateTime<Utc>,
}

impl AnnotationEvent {
    pub fn elapsed_ms(&self) -> i64 {
        (self.submitted_at - self.served_at).num_milliseconds().max(0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuestionnaireResponse {
    pub session_id: String,
    pub arm: Arm,
    pub answers: BTreeMap<String, i64>,
    pub submitted_at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Question {
    pub id: String,
    pub text: String,
    pub options: Vec<String>,
    pub min: i64,
    pub max: i64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Questionnaire(pub Vec<Question>);

impl Questionnaire {
    pub fn builtin() -> Self {
        serde_json::from_str(include_str!("../../data/questionnaire.json")).expect("bundled questionnaire parses")
    }

    /// Every question answered, within range, and nothing extra.
    pub fn validate(&self, answers: &BTreeMap<String, i64>) -> Result<(), Vec<String>> {
        let mut problems = Vec::new();
        for q in &self.0 {
            match answers.get(&q.id) {
                None => problems.push(format!("{} is unanswered", q.id)),
                Some(v) if !(q.min..=q.max).contains(v) => {
                    problems.push(format!("{} must be in {}..={}, got {v}", q.id, q.min, q.max))
                }
                Some(_) => {}
            }
        }
        for id in answers.keys() {
            if !self.0.iter().any(|q| &q.id == id) {
                problems.push(format!("{id} is not a question"));
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(problems)
        }
    }
}

pub trait Clock: Send + Sync {
    fn now(&self) -> DateTime<Utc>;
}

#[derive(Debug, Default, Clone, Copy)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> DateTime<Utc> {
        Utc::now()
    }
}

/// A clock that only moves when told to.
#[derive(Debug)]
pub struct ManualClock(Mutex<DateTime<Utc>>);

impl ManualClock {
    pub fn new(start: DateTime<Utc>) -> Self {
        Self(Mutex::new(start))
    }

    pub fn advance(&self, by: Duration) {
        *self.0.lock().expect("clock") += by;
    }

    pub fn set(&self, to: DateTime<Utc>) {
        *self.0.lock().expect("clock") = to;
    }
}

impl Clock for ManualClock {
    fn now(&self) -> DateTime<Utc> {
        *self.0.lock().expect("clock")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum AnnotationError {
    #[error("{0}")]
    NotFound(String),
    #[error("invalid input: {}", .0.join("; "))]
    Validation(Vec<String>),
    #[error("{0}")]
    Conflict(String),
    #[error("{0}")]
    OutOfOrder(String),
    #[error("{message}")]
    Gated {
        message: String,
        unlock_at: Option<DateTime<Utc>>,
    },
    #[error("{0}")]
    Incomplete(String),
    #[error("storage: {0}")]
    Storage(String),
    #[error("{0}")]
    BadRequest(String),
}

impl AnnotationError {
    pub fn code(&self) -> &'static str {
        match self {
            AnnotationError::NotFound(_) => "not_found",
            AnnotationError::Validation(_) => "validation",
            AnnotationError::Conflict(_) => "conflict",
            AnnotationError::OutOfOrder(_) => "out_of_order",
            AnnotationError::Gated { .. } => "arm_locked",
            AnnotationError::Incomplete(_) => "incomplete",
            AnnotationError::Storage(_) => "storage",
            AnnotationError::BadRequest(_) => "bad_request",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReportText {
    pub report: crate::corpus::ReportTag,
    pub text: String,
}

/// Character range of a verified sentence, in Unicode scalar values of the report text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Highlight {
    pub report: crate::corpus::ReportTag,
    pub sentence_index: usize,
    pub char_start: usize,
    pub char_end: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ItemView {
    pub session_id: String,
    pub arm: Arm,
    pub incident_id: String,
    pub factor_id: String,
    pub factor_name: String,
    pub factor_definition: String,
    pub reports: Vec<ReportText>,
    pub highlights: Vec<Highlight>,
    /// 1-based position of this item.
    pub position: usize,
    pub total: usize,
    pub served_at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum NextItem {
    Item(ItemView),
    Done { questionnaire_submitted: bool },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionInfo {
    pub session_id: String,
    pub study_id: String,
    pub annotator_id: String,
    pub arm: Arm,
    pub total: usize,
    pub answered: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecisionAck {
    pub incident_id: String,
    pub factor_id: String,
    pub elapsed_ms: i64,
    pub remaining: usize,
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::backend::RuleMock;
    use crate::corpus::{generate_corpus, FactorRegistry, GeneratorSpec, IncidentRecord, TaskKey};
    use crate::pipeline::{all_tasks, Mode, Pipeline, PipelineConfig, StageBackends, StageTrace};

    const FACTORS: [&str; 4] = ["alcohol_problem", "job_problem", "financial_problem", "mental_health_problem"];

    async fn fixture() -> (Vec<IncidentRecord>, Vec<StageTrace>) {
        let corpus = generate_corpus(&GeneratorSpec::new(3, 10)).unwrap().records;
        let factors: Vec<String> = FACTORS.iter().map(|s| s.to_string()).collect();
        let pipeline = Pipeline::new(
            FactorRegistry::builtin(),
            StageBackends::uniform(Arc::new(RuleMock::synthetic())),
            PipelineConfig::default(),
        );
        let out = pipeline.run_batch(all_tasks(&corpus, &factors, Mode::Multistage), &corpus).await.unwrap();
        (corpus, out.traces)
    }

    fn config(corpus: &[IncidentRecord], n: usize) -> StudyConfig {
        StudyConfig {
            study_id: Some("pilot".into()),
            ..StudyConfig::new(
                FACTORS.iter().map(|s| s.to_string()).collect(),
                corpus.iter().take(n).map(|r| r.incident_id.clone()).collect(),
                5,
            )
        }
    }

    fn start() -> DateTime<Utc> {
        DateTime::parse_from_rfc3339("2024-03-01T09:00:00Z").unwrap().with_timezone(&Utc)
    }

    async fn service(log: Option<&std::path::Path>) -> (AnnotationService, Arc<ManualClock>, Vec<IncidentRecord>, Vec<StageTrace>) {
        let (corpus, traces) = fixture().await;
        let clock = Arc::new(ManualClock::new(start()));
        let data = StudyData::new(FactorRegistry::builtin(), corpus.clone(), traces.clone());
        (AnnotationService::open(data, log, clock.clone()).unwrap(), clock, corpus, traces)
    }

    fn item(next: NextItem) -> ItemView {
        match next {
            NextItem::Item(v) => v,
            other => panic!("expected an item, got {other:?}"),
        }
    }

    fn run_arm(svc: &AnnotationService, clock: &ManualClock, sid: &str, secs: i64) -> Vec<(String, String)> {
        let mut seen = Vec::new();
        while let NextItem::Item(v) = svc.next_item(sid).unwrap() {
            clock.advance(Duration::seconds(secs));
            svc.submit_decision(sid, &v.incident_id, &v.factor_id, true).unwrap();
            seen.push((v.incident_id, v.factor_id));
        }
        seen
    }

    fn answers(v: i64) -> BTreeMap<String, i64> {
        (1..=12).map(|i| (format!("Q{i}"), if (7..=9).contains(&i) { 1 } else { v })).collect()
    }

    #[tokio::test]
    async fn study_has_one_item_per_pair_and_a_stable_order() {
        let (svc, _, corpus, _) = service(None).await;
        svc.create_study(config(&corpus, 7)).unwrap();
        let a = svc.open_session("pilot", "ann1", Arm::Control).unwrap();
        assert_eq!(a.total, 28);
        assert_eq!(svc.open_session("pilot", "ann1", Arm::Control).unwrap(), a);
        assert!(matches!(svc.create_study(config(&corpus, 7)), Err(AnnotationError::Conflict(_))));
    }

    #[tokio::test]
    async fn dangling_references_are_listed() {
        let (svc, _, corpus, _) = service(None).await;
        let mut bad = config(&corpus, 2);
        bad.factors.push("no_such_factor".into());
        bad.incidents.push("ghost".into());
        match svc.create_study(bad) {
            Err(AnnotationError::Validation(p)) => assert_eq!(p.len(), 2, "{p:?}"),
            other => panic!("{other:?}"),
        }
        let (corpus, mut traces) = fixture().await;
        traces.retain(|t| !(t.incident_id == corpus[0].incident_id && t.factor_id == "job_problem"));
        let data = StudyData::new(FactorRegistry::builtin(), corpus.clone(), traces);
        let svc = AnnotationService::open(data, None, Arc::new(SystemClock)).unwrap();
        assert!(matches!(svc.create_study(config(&corpus, 2)), Err(AnnotationError::Validation(_))));
        let mut plain = config(&corpus, 2);
        plain.highlights = false;
        svc.create_study(plain).unwrap();
    }

    #[tokio::test]
    async fn arms_share_order_and_only_intervention_highlights() {
        let (svc, clock, corpus, traces) = service(None).await;
        svc.create_study(config(&corpus, 7)).unwrap();
        let c = svc.open_session("pilot", "ann1", Arm::Control).unwrap().session_id;
        let i = svc.open_session("pilot", "ann1", Arm::Intervention).unwrap().session_id;

        match svc.next_item(&i) {
            Err(AnnotationError::Gated { unlock_at: None, .. }) => {}
            other => panic!("{other:?}"),
        }
        let first = item(svc.next_item(&c).unwrap());
        assert!(first.highlights.is_empty());
        let control_order = run_arm(&svc, &clock, &c, 10);

        match svc.next_item(&i) {
            Err(AnnotationError::Gated { unlock_at: Some(t), .. }) => assert_eq!(t, clock.now() + Duration::hours(24)),
            other => panic!("{other:?}"),
        }
        clock.advance(Duration::hours(24));
        let mut intervention_order = Vec::new();
        while let NextItem::Item(v) = svc.next_item(&i).unwrap() {
            let trace = traces
                .iter()
                .find(|t| t.key() == TaskKey::new(&v.incident_id, &v.factor_id) && t.mode == Mode::Multistage)
                .unwrap();
            assert_eq!(v.highlights.len(), trace.verified.len());
            for h in &v.highlights {
                let text = &v.reports.iter().find(|r| r.report == h.report).unwrap().text;
                let slice: String = text.chars().skip(h.char_start).take(h.char_end - h.char_start).collect();
                assert_eq!(slice, trace.span(&crate::corpus::SentenceRef { report: h.report, index: h.sentence_index }).unwrap().text);
            }
            svc.submit_decision(&i, &v.incident_id, &v.factor_id, false).unwrap();
            intervention_order.push((v.incident_id, v.factor_id));
        }
        assert_eq!(control_order, intervention_order);
        assert_eq!(control_order.len(), 28);

        let other = svc.open_session("pilot", "ann2", Arm::Control).unwrap().session_id;
        let other_order = run_arm(&svc, &clock, &other, 1);
        assert_ne!(other_order, control_order);
    }

    #[tokio::test]
    async fn decisions_are_forward_only_and_timed() {
        let (svc, clock, corpus, _) = service(None).await;
        svc.create_study(config(&corpus, 2)).unwrap();
        let sid = svc.open_session("pilot", "a", Arm::Control).unwrap().session_id;
        let v = item(svc.next_item(&sid).unwrap());
        clock.advance(Duration::milliseconds(4_500));
        let again = item(svc.next_item(&sid).unwrap());
        assert_eq!(again.served_at, v.served_at);
        let ack = svc.submit_decision(&sid, &v.incident_id, &v.factor_id, true).unwrap();
        assert_eq!(ack.elapsed_ms, 4_500);
        assert_eq!(ack.remaining, 7);
        assert!(matches!(
            svc.submit_decision(&sid, &v.incident_id, &v.factor_id, false),
            Err(AnnotationError::Conflict(_))
        ));
        let next = item(svc.next_item(&sid).unwrap());
        assert_eq!(next.position, 2);
        let later = svc.events("pilot").unwrap();
        assert_eq!(later.len(), 1);
        assert!(later[0].decision);

        let sid2 = svc.open_session("pilot", "b", Arm::Control).unwrap().session_id;
        assert!(matches!(
            svc.submit_decision(&sid2, &v.incident_id, &v.factor_id, true),
            Err(AnnotationError::OutOfOrder(_))
        ));
        assert!(matches!(svc.submit_decision(&sid2, "ghost", "job_problem", true), Err(AnnotationError::NotFound(_))));
    }

    #[tokio::test]
    async fn questionnaire_requires_completion_and_valid_answers() {
        let (svc, clock, corpus, _) = service(None).await;
        svc.create_study(config(&corpus, 1)).unwrap();
        let sid = svc.open_session("pilot", "a", Arm::Control).unwrap().session_id;
        assert!(matches!(svc.submit_questionnaire(&sid, answers(3)), Err(AnnotationError::Incomplete(_))));
        run_arm(&svc, &clock, &sid, 5);
        let mut partial = answers(3);
        partial.remove("Q7");
        partial.insert("Q1".into(), 6);
        match svc.submit_questionnaire(&sid, partial) {
            Err(AnnotationError::Validation(p)) => assert_eq!(p.len(), 2),
            other => panic!("{other:?}"),
        }
        let mut yes_no = answers(3);
        yes_no.insert("Q8".into(), 3);
        assert!(matches!(svc.submit_questionnaire(&sid, yes_no), Err(AnnotationError::Validation(_))));
        svc.submit_questionnaire(&sid, answers(3)).unwrap();
        assert!(matches!(svc.submit_questionnaire(&sid, answers(3)), Err(AnnotationError::Conflict(_))));
        assert_eq!(svc.next_item(&sid).unwrap(), NextItem::Done { questionnaire_submitted: true });
    }

    #[tokio::test]
    async fn restart_replays_every_acknowledged_event() {
        let dir = tempfile::tempdir().unwrap();
        let log = dir.path().join("events.jsonl");
        let (svc, clock, corpus, traces) = service(Some(&log)).await;
        let mut cfg = config(&corpus, 2);
        cfg.min_arm_gap_secs = 0;
        svc.create_study(cfg).unwrap();
        let sid = svc.open_session("pilot", "a", Arm::Control).unwrap().session_id;
        run_arm(&svc, &clock, &sid, 7);
        svc.submit_questionnaire(&sid, answers(4)).unwrap();
        let iid = svc.open_session("pilot", "a", Arm::Intervention).unwrap().session_id;
        let pending = item(svc.next_item(&iid).unwrap());
        let before = (svc.events("pilot").unwrap(), svc.report("pilot").unwrap());
        drop(svc);

        // A crash mid-append leaves a partial line behind.
        let mut f = std::fs::OpenOptions::new().append(true).open(&log).unwrap();
        std::io::Write::write_all(&mut f, b"{\"event\":\"decision_subm").unwrap();

        let data = StudyData::new(FactorRegistry::builtin(), corpus.clone(), traces.clone());
        let svc = AnnotationService::open(data, Some(&log), clock.clone()).unwrap();
        assert_eq!((svc.events("pilot").unwrap(), svc.report("pilot").unwrap()), before);
        let resumed = item(svc.next_item(&iid).unwrap());
        assert_eq!(resumed.served_at, pending.served_at);
        assert!(std::fs::read_to_string(&log).unwrap().ends_with('\n'));

        let data = StudyData::new(FactorRegistry::builtin(), corpus, Vec::new());
        assert!(matches!(
            AnnotationService::open(data, Some(&log), clock),
            Err(AnnotationError::Validation(_))
        ));
    }

    #[tokio::test]
    async fn report_accuracy_and_saving() {
        let (svc, clock, corpus, _) = service(None).await;
        let mut cfg = config(&corpus, 3);
        cfg.min_arm_gap_secs = 0;
        svc.create_study(cfg).unwrap();
        assert!(matches!(svc.report("pilot"), Err(AnnotationError::Incomplete(_))));
        let gold = svc.data().gold();
        for ann in ["a", "b"] {
            for (arm, secs) in [(Arm::Control, 40), (Arm::Intervention, 25)] {
                let sid = svc.open_session("pilot", ann, arm).unwrap().session_id;
                while let NextItem::Item(v) = svc.next_item(&sid).unwrap() {
                    clock.advance(Duration::seconds(secs));
                    let g = gold[&TaskKey::new(&v.incident_id, &v.factor_id)];
                    svc.submit_decision(&sid, &v.incident_id, &v.factor_id, g).unwrap();
                }
                svc.submit_questionnaire(&sid, answers(if arm == Arm::Control { 4 } else { 2 })).unwrap();
            }
        }
        let r = svc.report("pilot").unwrap();
        let (c, i) = (r.control.unwrap(), r.intervention.unwrap());
        assert_eq!((c.accuracy, i.accuracy), (Some(1.0), Some(1.0)));
        assert_eq!((c.decisions, c.completed_sessions), (24, 2));
        assert_eq!(c.mean_item_secs, 40.0);
        assert_eq!(c.mean_incident_secs, 160.0);
        assert_eq!(r.mean_saving_per_incident_secs, Some(60.0));
        assert_eq!(r.mean_saving_per_item_secs, Some(15.0));
        assert_eq!(r.paired_incidents, 6);
        let q1 = c.questionnaire.iter().find(|q| q.question_id == "Q1").unwrap();
        assert_eq!(q1.counts, BTreeMap::from([(4, 2)]));
    }

    #[test]
    fn builtin_questionnaire_ranges() {
        let q = Questionnaire::builtin();
        assert_eq!(q.0.len(), 12);
        for question in &q.0 {
            let yes_no = ["Q7", "Q8", "Q9"].contains(&question.id.as_str());
            assert_eq!(question.max, if yes_no { 2 } else { 5 });
            assert_eq!(question.options.len() as i64, question.max);
        }
    }
}
