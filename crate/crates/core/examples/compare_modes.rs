//! Scores all four extraction modes against generated gold labels.
//!
//! cargo run --example compare_modes

use std::sync::Arc;

use sdoh::backend::RuleMock;
use sdoh::corpus::{generate_corpus, GeneratorSpec};
use sdoh::eval::{gold_labels, render_report, EvalReport, ReportFormat, RunMetadata};
use sdoh::pipeline::{all_tasks, Mode, Pipeline, PipelineConfig, StageBackends};

#[tokio::main]
async fn main() {
    let spec = GeneratorSpec::new(11, 50);
    let corpus = generate_corpus(&spec).expect("valid spec").records;
    let factors: Vec<String> = spec.registry.iter().map(|f| f.factor_id.clone()).collect();
    let pipeline = Pipeline::new(
        spec.registry.clone(),
        StageBackends::uniform(Arc::new(RuleMock::synthetic())),
        PipelineConfig::default(),
    );
    let mut traces = Vec::new();
    for mode in Mode::ALL {
        let out = pipeline.run_batch(all_tasks(&corpus, &factors, mode), &corpus).await.expect("valid tasks");
        println!("{mode}: {} ok, {} failed", out.succeeded, out.failed);
        traces.extend(out.traces);
    }
    let report = EvalReport::from_traces(&traces, &gold_labels(&corpus), RunMetadata::now()).expect("gold covers tasks");
    print!("{}", render_report(&report, ReportFormat::Text));
}
