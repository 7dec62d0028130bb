use std::collections::{BTreeMap, BTreeSet};
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, MutexGuard};

use chrono::{DateTime, Utc};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{
    report, AnnotationError, AnnotationEvent, Arm, Clock, DecisionAck, Highlight, ItemKey, ItemView, NextItem,
    Questionnaire, QuestionnaireResponse, ReportText, SessionInfo, StudyConfig, StudyReport,
};
use crate::corpus::{FactorRegistry, IncidentRecord, ReportTag, TaskKey};
use crate::pipeline::{Mode, StageTrace};

/// One line of the event log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum StoreEvent {
    StudyCreated {
        at: DateTime<Utc>,
        config: StudyConfig,
    },
    SessionOpened {
        at: DateTime<Utc>,
        session_id: String,
        study_id: String,
        annotator_id: String,
        arm: Arm,
    },
    ItemServed {
        at: DateTime<Utc>,
        session_id: String,
        incident_id: String,
        factor_id: String,
    },
    DecisionSubmitted {
        at: DateTime<Utc>,
        session_id: String,
        incident_id: String,
        factor_id: String,
        decision: bool,
    },
    QuestionnaireSubmitted {
        at: DateTime<Utc>,
        session_id: String,
        answers: BTreeMap<String, i64>,
    },
}

/// Read-only inputs: factor definitions, reports, gold labels and the traces
/// that supply intervention highlights.
pub struct StudyData {
    pub registry: FactorRegistry,
    pub incidents: BTreeMap<String, IncidentRecord>,
    /// Successful multistage traces by task.
    pub traces: BTreeMap<TaskKey, StageTrace>,
    pub questionnaire: Questionnaire,
}

impl StudyData {
    pub fn new(registry: FactorRegistry, corpus: Vec<IncidentRecord>, traces: Vec<StageTrace>) -> Self {
        Self {
            registry,
            incidents: corpus.into_iter().map(|r| (r.incident_id.clone(), r)).collect(),
            traces: traces
                .into_iter()
                .filter(|t| t.mode == Mode::Multistage && t.succeeded())
                .map(|t| (t.key(), t))
                .collect(),
            questionnaire: Questionnaire::builtin(),
        }
    }

    pub fn gold(&self) -> BTreeMap<TaskKey, bool> {
        crate::eval::gold_labels(&self.incidents.values().cloned().collect::<Vec<_>>())
    }

    fn highlights(&self, incident_id: &str, factor_id: &str) -> Result<Vec<Highlight>, String> {
        let key = TaskKey::new(incident_id, factor_id);
        let trace = self.traces.get(&key).ok_or_else(|| format!("no multistage trace for {key}"))?;
        let record = &self.incidents[incident_id];
        trace
            .verified
            .iter()
            .map(|r| {
                let span = trace.span(r).ok_or_else(|| format!("{key}: verified sentence {r:?} is not in the trace"))?;
                let text: String = record
                    .report(span.report_tag)
                    .chars()
                    .skip(span.char_start)
                    .take(span.char_end - span.char_start)
                    .collect();
                if text != span.text {
                    return Err(format!("{key}: trace sentence {r:?} does not match the corpus text"));
                }
                Ok(Highlight {
                    report: span.report_tag,
                    sentence_index: span.index,
                    char_start: span.char_start,
                    char_end: span.char_end,
                })
            })
            .collect()
    }

    fn validate(&self, config: &StudyConfig) -> Result<(), AnnotationError> {
        let mut problems = Vec::new();
        if config.factors.is_empty() {
            problems.push("factors is empty".to_string());
        }
        if config.incidents.is_empty() {
            problems.push("incidents is empty".to_string());
        }
        for (what, list) in [("factor", &config.factors), ("incident", &config.incidents)] {
            let mut seen = BTreeSet::new();
            for id in list {
                if !seen.insert(id) {
                    problems.push(format!("duplicate {what} `{id}`"));
                }
            }
        }
        for f in &config.factors {
            if !self.registry.contains(f) {
                problems.push(format!("unknown factor `{f}`"));
            }
        }
        for i in &config.incidents {
            if !self.incidents.contains_key(i) {
                problems.push(format!("unknown incident `{i}`"));
            }
        }
        if problems.is_empty() && config.highlights {
            for i in &config.incidents {
                for f in &config.factors {
                    if let Err(e) = self.highlights(i, f) {
                        problems.push(e);
                    }
                }
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(AnnotationError::Validation(problems))
        }
    }
}

#[derive(Debug, Clone)]
struct Session {
    id: String,
    study_id: String,
    annotator_id: String,
    arm: Arm,
    order: Vec<ItemKey>,
    served: BTreeMap<ItemKey, DateTime<Utc>>,
    decisions: Vec<AnnotationEvent>,
    questionnaire: Option<QuestionnaireResponse>,
}

impl Session {
    fn current(&self) -> Option<&ItemKey> {
        self.order.get(self.decisions.len())
    }

    fn completed_at(&self) -> Option<DateTime<Utc>> {
        if self.decisions.len() == self.order.len() {
            self.decisions.last().map(|d| d.submitted_at)
        } else {
            None
        }
    }

    fn info(&self) -> SessionInfo {
        SessionInfo {
            session_id: self.id.clone(),
            study_id: self.study_id.clone(),
            annotator_id: self.annotator_id.clone(),
            arm: self.arm,
            total: self.order.len(),
            answered: self.decisions.len(),
        }
    }
}

#[derive(Debug, Default)]
struct State {
    studies: BTreeMap<String, StudyConfig>,
    sessions: BTreeMap<String, Session>,
}

/// Same seeded order for every arm of one annotator.
fn item_order(config: &StudyConfig, annotator_id: &str) -> Vec<ItemKey> {
    let mut items: Vec<ItemKey> = config
        .incidents
        .iter()
        .flat_map(|i| {
            config.factors.iter().map(move |f| ItemKey {
                incident_id: i.clone(),
                factor_id: f.clone(),
            })
        })
        .collect();
    let mut h = Sha256::new();
    h.update(config.seed.to_le_bytes());
    h.update(config.study_id.as_deref().unwrap_or_default().as_bytes());
    h.update([0]);
    h.update(annotator_id.as_bytes());
    let mut rng = ChaCha8Rng::from_seed(h.finalize().into());
    items.shuffle(&mut rng);
    items
}

fn session_id(study_id: &str, annotator_id: &str, arm: Arm) -> String {
    let mut h = Sha256::new();
    for part in [study_id, annotator_id, arm.as_str()] {
        h.update(part.as_bytes());
        h.update([0]);
    }
    hex::encode(&h.finalize()[..8])
}

fn valid_id(id: &str) -> bool {
    !id.is_empty() && id.len() <= 128 && id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.')
}

impl State {
    fn session(&self, sid: &str) -> Result<&Session, AnnotationError> {
        self.sessions
            .get(sid)
            .ok_or_else(|| AnnotationError::NotFound(format!("no session `{sid}`")))
    }

    fn find_session(&self, study_id: &str, annotator_id: &str, arm: Arm) -> Option<&Session> {
        self.sessions.get(&session_id(study_id, annotator_id, arm))
    }

    fn apply(&mut self, event: StoreEvent) -> Result<(), String> {
        match event {
            StoreEvent::StudyCreated { config, .. } => {
                let id = config.study_id.clone().ok_or("study without id")?;
                self.studies.insert(id, config);
            }
            StoreEvent::SessionOpened {
                session_id,
                study_id,
                annotator_id,
                arm,
                ..
            } => {
                let config = self.studies.get(&study_id).ok_or_else(|| format!("unknown study {study_id}"))?;
                let order = item_order(config, &annotator_id);
                self.sessions.insert(
                    session_id.clone(),
                    Session {
                        id: session_id,
                        study_id,
                        annotator_id,
                        arm,
                        order,
                        served: BTreeMap::new(),
                        decisions: Vec::new(),
                        questionnaire: None,
                    },
                );
            }
            StoreEvent::ItemServed {
                at,
                session_id,
                incident_id,
                factor_id,
            } => {
                let s = self.sessions.get_mut(&session_id).ok_or("serve for unknown session")?;
                s.served.entry(ItemKey { incident_id, factor_id }).or_insert(at);
            }
            StoreEvent::DecisionSubmitted {
                at,
                session_id,
                incident_id,
                factor_id,
                decision,
            } => {
                let s = self.sessions.get_mut(&session_id).ok_or("decision for unknown session")?;
                let key = ItemKey { incident_id, factor_id };
                let served_at = *s.served.get(&key).ok_or("decision for an unserved item")?;
                s.decisions.push(AnnotationEvent {
                    session_id,
                    annotator_id: s.annotator_id.clone(),
                    arm: s.arm,
                    incident_id: key.incident_id,
                    factor_id: key.factor_id,
                    decision,
                    served_at,
                    submitted_at: at,
                });
            }
            StoreEvent::QuestionnaireSubmitted { at, session_id, answers } => {
                let s = self.sessions.get_mut(&session_id).ok_or("questionnaire for unknown session")?;
                s.questionnaire = Some(QuestionnaireResponse {
                    session_id,
                    arm: s.arm,
                    answers,
                    submitted_at: at,
                });
            }
        }
        Ok(())
    }
}

struct Log {
    path: PathBuf,
    file: File,
}

impl Log {
    /// Opens the log, dropping a torn final line left by a crash mid-append.
    fn open(path: &Path) -> Result<(Self, Vec<StoreEvent>), AnnotationError> {
        let storage = |e: std::io::Error| AnnotationError::Storage(format!("{}: {e}", path.display()));
        let text = match std::fs::read_to_string(path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => String::new(),
            Err(e) => return Err(storage(e)),
        };
        let mut events = Vec::new();
        let mut good_len = 0;
        for (n, line) in text.split_inclusive('\n').enumerate() {
            if !line.ends_with('\n') {
                break;
            }
            let event = serde_json::from_str::<StoreEvent>(line.trim_end())
                .map_err(|e| AnnotationError::Storage(format!("{} line {}: {e}", path.display(), n + 1)))?;
            events.push(event);
            good_len += line.len();
        }
        let file = OpenOptions::new().create(true).append(true).open(path).map_err(storage)?;
        if good_len < text.len() {
            tracing::warn!(path = %path.display(), "dropping torn final log line");
            file.set_len(good_len as u64).map_err(storage)?;
        }
        Ok((
            Self {
                path: path.to_path_buf(),
                file,
            },
            events,
        ))
    }

    fn append(&mut self, event: &StoreEvent) -> Result<(), AnnotationError> {
        let mut line = serde_json::to_string(event).expect("events serialize");
        line.push('\n');
        self.file
            .write_all(line.as_bytes())
            .and_then(|_| self.file.sync_data())
            .map_err(|e| AnnotationError::Storage(format!("{}: {e}", self.path.display())))
    }
}

struct Inner {
    log: Option<Log>,
    state: State,
}

impl Inner {
    /// Durably records the event, then applies it.
    fn commit(&mut self, event: StoreEvent) -> Result<(), AnnotationError> {
        if let Some(log) = &mut self.log {
            log.append(&event)?;
        }
        self.state.apply(event).map_err(AnnotationError::Storage)
    }
}

pub struct AnnotationService {
    data: StudyData,
    clock: Arc<dyn Clock>,
    inner: Mutex<Inner>,
}

impl AnnotationService {
    /// Replays `log` (created if absent) and revalidates every stored study
    /// against `data`. `None` keeps everything in memory.
    pub fn open(data: StudyData, log: Option<&Path>, clock: Arc<dyn Clock>) -> Result<Self, AnnotationError> {
        let mut state = State::default();
        let log = match log {
            Some(path) => {
                let (log, events) = Log::open(path)?;
                for e in events {
                    state.apply(e).map_err(AnnotationError::Storage)?;
                }
                Some(log)
            }
            None => None,
        };
        for config in state.studies.values() {
            data.validate(config)?;
        }
        Ok(Self {
            data,
            clock,
            inner: Mutex::new(Inner { log, state }),
        })
    }

    fn lock(&self) -> MutexGuard<'_, Inner> {
        self.inner.lock().unwrap_or_else(|p| p.into_inner())
    }

    pub fn data(&self) -> &StudyData {
        &self.data
    }

    pub fn questionnaire(&self) -> &Questionnaire {
        &self.data.questionnaire
    }

    pub fn create_study(&self, mut config: StudyConfig) -> Result<StudyConfig, AnnotationError> {
        let mut inner = self.lock();
        let id = match config.study_id.take() {
            Some(id) if !valid_id(&id) => {
                return Err(AnnotationError::Validation(vec![format!(
                    "study_id `{id}` must be 1-128 characters of A-Z a-z 0-9 - _ ."
                )]))
            }
            Some(id) => id,
            None => format!("study-{}", inner.state.studies.len() + 1),
        };
        if inner.state.studies.contains_key(&id) {
            return Err(AnnotationError::Conflict(format!("study `{id}` already exists")));
        }
        config.study_id = Some(id);
        self.data.validate(&config)?;
        inner.commit(StoreEvent::StudyCreated {
            at: self.clock.now(),
            config: config.clone(),
        })?;
        Ok(config)
    }

    pub fn study(&self, study_id: &str) -> Result<StudyConfig, AnnotationError> {
        self.lock()
            .state
            .studies
            .get(study_id)
            .cloned()
            .ok_or_else(|| AnnotationError::NotFound(format!("no study `{study_id}`")))
    }

    pub fn study_ids(&self) -> Vec<String> {
        self.lock().state.studies.keys().cloned().collect()
    }

    /// Opens the annotator's session for `arm`, or returns the existing one.
    pub fn open_session(&self, study_id: &str, annotator_id: &str, arm: Arm) -> Result<SessionInfo, AnnotationError> {
        let mut inner = self.lock();
        if !inner.state.studies.contains_key(study_id) {
            return Err(AnnotationError::NotFound(format!("no study `{study_id}`")));
        }
        if !valid_id(annotator_id) {
            return Err(AnnotationError::Validation(vec![format!(
                "annotator_id `{annotator_id}` must be 1-128 characters of A-Z a-z 0-9 - _ ."
            )]));
        }
        if let Some(s) = inner.state.find_session(study_id, annotator_id, arm) {
            return Ok(s.info());
        }
        let sid = session_id(study_id, annotator_id, arm);
        inner.commit(StoreEvent::SessionOpened {
            at: self.clock.now(),
            session_id: sid.clone(),
            study_id: study_id.to_string(),
            annotator_id: annotator_id.to_string(),
            arm,
        })?;
        Ok(inner.state.session(&sid)?.info())
    }

    pub fn session(&self, sid: &str) -> Result<SessionInfo, AnnotationError> {
        Ok(self.lock().state.session(sid)?.info())
    }

    fn gate(&self, state: &State, session: &Session, now: DateTime<Utc>) -> Result<(), AnnotationError> {
        if session.arm == Arm::Control {
            return Ok(());
        }
        let control = state.find_session(&session.study_id, &session.annotator_id, Arm::Control);
        let Some(done) = control.and_then(Session::completed_at) else {
            return Err(AnnotationError::Gated {
                message: "the intervention arm opens after the control arm is completed".into(),
                unlock_at: None,
            });
        };
        let unlock_at = done + state.studies[&session.study_id].min_arm_gap();
        if now < unlock_at {
            return Err(AnnotationError::Gated {
                message: format!("the intervention arm is locked until {}", unlock_at.to_rfc3339()),
                unlock_at: Some(unlock_at),
            });
        }
        Ok(())
    }

    /// Serves the current item. Asking again before deciding returns the
    /// same item with its original serve time.
    pub fn next_item(&self, sid: &str) -> Result<NextItem, AnnotationError> {
        let mut inner = self.lock();
        let now = self.clock.now();
        let session = inner.state.session(sid)?.clone();
        let Some(item) = session.current().cloned() else {
            return Ok(NextItem::Done {
                questionnaire_submitted: session.questionnaire.is_some(),
            });
        };
        let served_at = match session.served.get(&item) {
            Some(at) => *at,
            None => {
                self.gate(&inner.state, &session, now)?;
                inner.commit(StoreEvent::ItemServed {
                    at: now,
                    session_id: sid.to_string(),
                    incident_id: item.incident_id.clone(),
                    factor_id: item.factor_id.clone(),
                })?;
                now
            }
        };
        let config = &inner.state.studies[&session.study_id];
        let record = &self.data.incidents[&item.incident_id];
        let factor = self.data.registry.get(&item.factor_id).expect("validated factor");
        let highlights = if session.arm == Arm::Intervention && config.highlights {
            self.data
                .highlights(&item.incident_id, &item.factor_id)
                .map_err(AnnotationError::Storage)?
        } else {
            Vec::new()
        };
        Ok(NextItem::Item(ItemView {
            session_id: sid.to_string(),
            arm: session.arm,
            incident_id: item.incident_id.clone(),
            factor_id: item.factor_id.clone(),
            factor_name: factor.name.clone(),
            factor_definition: factor.definition.clone(),
            reports: [ReportTag::Cme, ReportTag::Le]
                .into_iter()
                .map(|report| ReportText {
                    report,
                    text: record.report(report).to_string(),
                })
                .collect(),
            highlights,
            position: session.decisions.len() + 1,
            total: session.order.len(),
            served_at,
        }))
    }

    pub fn submit_decision(
        &self,
        sid: &str,
        incident_id: &str,
        factor_id: &str,
        decision: bool,
    ) -> Result<DecisionAck, AnnotationError> {
        let mut inner = self.lock();
        let session = inner.state.session(sid)?;
        let key = ItemKey {
            incident_id: incident_id.to_string(),
            factor_id: factor_id.to_string(),
        };
        if !session.order.contains(&key) {
            return Err(AnnotationError::NotFound(format!("{incident_id}/{factor_id} is not an item of this session")));
        }
        if session.decisions.iter().any(|d| d.incident_id == incident_id && d.factor_id == factor_id) {
            return Err(AnnotationError::Conflict(format!("{incident_id}/{factor_id} was already answered")));
        }
        if session.current() != Some(&key) || !session.served.contains_key(&key) {
            return Err(AnnotationError::OutOfOrder(format!("{incident_id}/{factor_id} has not been served")));
        }
        let remaining = session.order.len() - session.decisions.len() - 1;
        inner.commit(StoreEvent::DecisionSubmitted {
            at: self.clock.now(),
            session_id: sid.to_string(),
            incident_id: incident_id.to_string(),
            factor_id: factor_id.to_string(),
            decision,
        })?;
        let stored = inner.state.session(sid)?.decisions.last().expect("just stored");
        Ok(DecisionAck {
            incident_id: incident_id.to_string(),
            factor_id: factor_id.to_string(),
            elapsed_ms: stored.elapsed_ms(),
            remaining,
        })
    }

    pub fn submit_questionnaire(&self, sid: &str, answers: BTreeMap<String, i64>) -> Result<(), AnnotationError> {
        let mut inner = self.lock();
        let session = inner.state.session(sid)?;
        if session.completed_at().is_none() {
            return Err(AnnotationError::Incomplete(format!(
                "{} of {} items answered",
                session.decisions.len(),
                session.order.len()
            )));
        }
        if session.questionnaire.is_some() {
            return Err(AnnotationError::Conflict("questionnaire already submitted".into()));
        }
        self.data.questionnaire.validate(&answers).map_err(AnnotationError::Validation)?;
        inner.commit(StoreEvent::QuestionnaireSubmitted {
            at: self.clock.now(),
            session_id: sid.to_string(),
            answers,
        })
    }

    /// Stored decisions of a study, by session then submission order.
    pub fn events(&self, study_id: &str) -> Result<Vec<AnnotationEvent>, AnnotationError> {
        let inner = self.lock();
        if !inner.state.studies.contains_key(study_id) {
            return Err(AnnotationError::NotFound(format!("no study `{study_id}`")));
        }
        Ok(inner
            .state
            .sessions
            .values()
            .filter(|s| s.study_id == study_id)
            .flat_map(|s| s.decisions.iter().cloned())
            .collect())
    }

    pub fn report(&self, study_id: &str) -> Result<StudyReport, AnnotationError> {
        let inner = self.lock();
        let config = inner
            .state
            .studies
            .get(study_id)
            .ok_or_else(|| AnnotationError::NotFound(format!("no study `{study_id}`")))?;
        let sessions: Vec<&Session> = inner.state.sessions.values().filter(|s| s.study_id == study_id).collect();
        let events: Vec<AnnotationEvent> = sessions.iter().flat_map(|s| s.decisions.iter().cloned()).collect();
        let questionnaires: Vec<QuestionnaireResponse> =
            sessions.iter().filter_map(|s| s.questionnaire.clone()).collect();
        let items = config.factors.len() * config.incidents.len();
        report::study_report(study_id, &events, &questionnaires, items, &self.data.gold())
    }
}
