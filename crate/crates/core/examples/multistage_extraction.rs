//! Runs the three-stage pipeline on one incident and prints its evidence chain.
//!
//! cargo run --example multistage_extraction

use std::sync::Arc;

use sdoh::backend::RuleMock;
use sdoh::corpus::{FactorRegistry, IncidentRecord};
use sdoh::pipeline::{Mode, Pipeline, PipelineConfig, StageBackends, TaskSpec};

#[tokio::main]
async fn main() {
    let record = IncidentRecord {
        incident_id: "demo-1".into(),
        cme_report: "The V was found in his garage. He was fired from his position at the plant two days before his death."
            .into(),
        le_report: "Family reported that he had a drinking problem one year before his death. He lived alone.".into(),
        gold_labels: None,
        gold_sentences: None,
        metadata: Default::default(),
    };
    let pipeline = Pipeline::new(
        FactorRegistry::builtin(),
        StageBackends::uniform(Arc::new(RuleMock::synthetic())),
        PipelineConfig::default(),
    );
    for factor in ["job_problem", "alcohol_problem"] {
        let trace = pipeline.run(&TaskSpec::new("demo-1", factor, Mode::Multistage), &record).await.expect("known task");
        println!("{factor}: verdict {:?}", trace.verdict);
        for r in &trace.retrieved.matched {
            let mark = if trace.verified.contains(r) { "verified" } else { "rejected" };
            println!("  {mark:<9} {}", trace.span(r).map_or("", |s| s.text.as_str()));
        }
        for r in &trace.responses {
            println!("  {:<13} {}", r.stage.as_str(), r.raw_text);
        }
    }
}
