//! Simulates a two-arm annotation study against the in-process service.
//!
//! cargo run --example annotation_study

use std::sync::Arc;

use chrono::{Duration, Utc};
use sdoh::annotation::{AnnotationService, Arm, ManualClock, NextItem, StudyConfig, StudyData};
use sdoh::backend::RuleMock;
use sdoh::corpus::{generate_corpus, GeneratorSpec, TaskKey};
use sdoh::pipeline::{all_tasks, Mode, Pipeline, PipelineConfig, StageBackends};

#[tokio::main]
async fn main() {
    let spec = GeneratorSpec::new(2, 3);
    let corpus = generate_corpus(&spec).expect("valid spec").records;
    let factors = vec!["job_problem".to_string(), "financial_problem".to_string()];
    let pipeline = Pipeline::new(
        spec.registry.clone(),
        StageBackends::uniform(Arc::new(RuleMock::synthetic())),
        PipelineConfig::default(),
    );
    let traces = pipeline.run_batch(all_tasks(&corpus, &factors, Mode::Multistage), &corpus).await.expect("tasks").traces;

    let clock = Arc::new(ManualClock::new(Utc::now()));
    let data = StudyData::new(spec.registry.clone(), corpus.clone(), traces);
    let gold = data.gold();
    let service = AnnotationService::open(data, None, clock.clone()).expect("in-memory service");
    let incidents = corpus.iter().map(|r| r.incident_id.clone()).collect();
    let study = service
        .create_study(StudyConfig { study_id: Some("demo".into()), ..StudyConfig::new(factors, incidents, 1) })
        .expect("valid study");
    println!("study {:?}, arm gap {} s", study.study_id, study.min_arm_gap_secs);

    for (arm, secs) in [(Arm::Control, 30), (Arm::Intervention, 18)] {
        if arm == Arm::Intervention {
            clock.advance(Duration::seconds(study.min_arm_gap_secs as i64));
        }
        for annotator in ["ann1", "ann2"] {
            let sid = service.open_session("demo", annotator, arm).expect("session").session_id;
            while let NextItem::Item(item) = service.next_item(&sid).expect("not gated") {
                clock.advance(Duration::seconds(secs));
                let truth = gold[&TaskKey::new(&item.incident_id, &item.factor_id)];
                let highlighted = !item.highlights.is_empty();
                service.submit_decision(&sid, &item.incident_id, &item.factor_id, truth || highlighted).expect("in order");
            }
            let answers = service.questionnaire().0.iter().map(|q| (q.id.clone(), q.min)).collect();
            service.submit_questionnaire(&sid, answers).expect("complete session");
        }
    }
    println!("{}", serde_json::to_string_pretty(&service.report("demo").expect("completed sessions")).unwrap());
}
