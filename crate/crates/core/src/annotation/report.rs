use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{AnnotationError, AnnotationEvent, Arm, QuestionnaireResponse};
use crate::corpus::TaskKey;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionDistribution {
    pub question_id: String,
    /// Answer value to number of responses.
    pub counts: BTreeMap<i64, u64>,
    pub mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmReport {
    pub arm: Arm,
    pub completed_sessions: usize,
    pub decisions: usize,
    /// Decisions whose item has a gold label.
    pub labeled: usize,
    pub correct: usize,
    pub accuracy: Option<f64>,
    pub mean_item_secs: f64,
    pub median_item_secs: f64,
    /// Time per incident sums the item times of one annotator on one incident.
    pub mean_incident_secs: f64,
    pub median_incident_secs: f64,
    pub questionnaire: Vec<QuestionDistribution>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyReport {
    pub study_id: String,
    pub control: Option<ArmReport>,
    pub intervention: Option<ArmReport>,
    /// Mean of control minus intervention time over (annotator, incident) pairs done in both arms.
    pub mean_saving_per_incident_secs: Option<f64>,
    pub mean_saving_per_item_secs: Option<f64>,
    pub paired_incidents: usize,
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

fn median(v: &[f64]) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let m = s.len() / 2;
    if s.len() % 2 == 1 {
        s[m]
    } else {
        (s[m - 1] + s[m]) / 2.0
    }
}

fn secs(ms: i64) -> f64 {
    ms as f64 / 1000.0
}

type IncidentTimes = BTreeMap<(String, String), i64>;

fn incident_times(events: &[&AnnotationEvent]) -> IncidentTimes {
    let mut out = IncidentTimes::new();
    for e in events {
        *out.entry((e.annotator_id.clone(), e.incident_id.clone())).or_default() += e.elapsed_ms();
    }
    out
}

fn arm_report(
    arm: Arm,
    events: &[&AnnotationEvent],
    sessions: usize,
    questionnaires: &[QuestionnaireResponse],
    gold: &BTreeMap<TaskKey, bool>,
) -> ArmReport {
    let mut labeled = 0;
    let mut correct = 0;
    for e in events {
        if let Some(&g) = gold.get(&TaskKey::new(&e.incident_id, &e.factor_id)) {
            labeled += 1;
            correct += usize::from(g == e.decision);
        }
    }
    let items: Vec<f64> = events.iter().map(|e| secs(e.elapsed_ms())).collect();
    let incidents: Vec<f64> = incident_times(events).values().map(|&ms| secs(ms)).collect();
    let mut by_question: BTreeMap<&str, Vec<i64>> = BTreeMap::new();
    for q in questionnaires.iter().filter(|q| q.arm == arm) {
        for (id, &v) in &q.answers {
            by_question.entry(id).or_default().push(v);
        }
    }
    let questionnaire = by_question
        .into_iter()
        .map(|(id, values)| {
            let mut counts = BTreeMap::new();
            for v in &values {
                *counts.entry(*v).or_default() += 1;
            }
            QuestionDistribution {
                question_id: id.to_string(),
                counts,
                mean: values.iter().sum::<i64>() as f64 / values.len() as f64,
            }
        })
        .collect();
    ArmReport {
        arm,
        completed_sessions: sessions,
        decisions: events.len(),
        labeled,
        correct,
        accuracy: (labeled > 0).then(|| correct as f64 / labeled as f64),
        mean_item_secs: mean(&items),
        median_item_secs: median(&items),
        mean_incident_secs: mean(&incidents),
        median_incident_secs: median(&incidents),
        questionnaire,
    }
}

/// Summarizes the completed sessions of a study. Depends only on the stored
/// decisions, questionnaires and gold labels.
pub fn study_report(
    study_id: &str,
    events: &[AnnotationEvent],
    questionnaires: &[QuestionnaireResponse],
    items_per_session: usize,
    gold: &BTreeMap<TaskKey, bool>,
) -> Result<StudyReport, AnnotationError> {
    let mut per_session: BTreeMap<&str, Vec<&AnnotationEvent>> = BTreeMap::new();
    for e in events {
        per_session.entry(&e.session_id).or_default().push(e);
    }
    let completed: BTreeSet<&str> = per_session
        .iter()
        .filter(|(_, v)| v.len() == items_per_session)
        .map(|(s, _)| *s)
        .collect();
    if completed.is_empty() {
        return Err(AnnotationError::Incomplete(format!("study `{study_id}` has no completed sessions")));
    }
    let of_arm = |arm: Arm| -> (Vec<&AnnotationEvent>, usize) {
        let sessions: Vec<&str> = completed
            .iter()
            .copied()
            .filter(|s| per_session[s].first().is_some_and(|e| e.arm == arm))
            .collect();
        (sessions.iter().flat_map(|s| per_session[s].iter().copied()).collect(), sessions.len())
    };
    let done: Vec<QuestionnaireResponse> = questionnaires
        .iter()
        .filter(|q| completed.contains(q.session_id.as_str()))
        .cloned()
        .collect();
    let (control_events, control_n) = of_arm(Arm::Control);
    let (intervention_events, intervention_n) = of_arm(Arm::Intervention);
    let report = |arm, ev: &[&AnnotationEvent], n| (n > 0).then(|| arm_report(arm, ev, n, &done, gold));

    let control_inc = incident_times(&control_events);
    let intervention_inc = incident_times(&intervention_events);
    let incident_savings: Vec<f64> = control_inc
        .iter()
        .filter_map(|(k, c)| Some(secs(c - intervention_inc.get(k)?)))
        .collect();
    let item_ms = |ev: &[&AnnotationEvent]| -> BTreeMap<(String, String, String), i64> {
        ev.iter()
            .map(|e| ((e.annotator_id.clone(), e.incident_id.clone(), e.factor_id.clone()), e.elapsed_ms()))
            .collect()
    };
    let intervention_items = item_ms(&intervention_events);
    let item_savings: Vec<f64> = item_ms(&control_events)
        .iter()
        .filter_map(|(k, c)| Some(secs(c - intervention_items.get(k)?)))
        .collect();

    Ok(StudyReport {
        study_id: study_id.to_string(),
        control: report(Arm::Control, &control_events, control_n),
        intervention: report(Arm::Intervention, &intervention_events, intervention_n),
        mean_saving_per_incident_secs: (!incident_savings.is_empty()).then(|| mean(&incident_savings)),
        mean_saving_per_item_secs: (!item_savings.is_empty()).then(|| mean(&item_savings)),
        paired_incidents: incident_savings.len(),
    })
}
