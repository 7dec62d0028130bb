//! Measures how much verification repairs a noisy retriever.
//!
//! cargo run --example retrieval_accuracy

use std::sync::Arc;

use sdoh::backend::{NoisyRetriever, RuleMock};
use sdoh::corpus::{generate_corpus, GeneratorSpec};
use sdoh::eval::{render_retrieval, retrieval_accuracy, ReportFormat};
use sdoh::pipeline::{all_tasks, Mode, Pipeline, PipelineConfig, StageBackends};

#[tokio::main]
async fn main() {
    let spec = GeneratorSpec::new(7, 100);
    let generated = generate_corpus(&spec).expect("valid spec");
    let factors: Vec<String> = spec.registry.iter().map(|f| f.factor_id.clone()).collect();
    let backends = StageBackends {
        retriever: Some(Arc::new(NoisyRetriever::new(RuleMock::synthetic(), 0.2, 0.3, 1))),
        examiner: Some(Arc::new(RuleMock::synthetic())),
        extractor: Some(Arc::new(RuleMock::synthetic())),
    };
    let pipeline = Pipeline::new(spec.registry.clone(), backends, PipelineConfig::default());
    let tasks = all_tasks(&generated.records, &factors, Mode::Multistage);
    let out = pipeline.run_batch(tasks, &generated.records).await.expect("valid tasks");
    let report = retrieval_accuracy(&out.traces, &generated.relevance).expect("gold covers every retrieved sentence");
    print!("{}", render_retrieval(&report, ReportFormat::Text));
}
