//! Records responses into a replay cache, then reruns from the cache alone.
//!
//! cargo run --example replay_cache

use std::sync::Arc;

use sdoh::backend::{BackendError, ReplayBackend, RuleMock, ScriptedBackend, SharedBackend};
use sdoh::corpus::{generate_corpus, GeneratorSpec};
use sdoh::pipeline::{all_tasks, Mode, Pipeline, PipelineConfig, StageBackends};

#[tokio::main]
async fn main() {
    let spec = GeneratorSpec::new(3, 5);
    let corpus = generate_corpus(&spec).expect("valid spec").records;
    let factors = vec!["job_problem".to_string(), "alcohol_problem".to_string()];
    let dir = std::env::temp_dir().join(format!("sdoh-replay-{}", std::process::id()));

    let offline = ScriptedBackend::new("rule-mock", |req| {
        Err(BackendError::Failed { tag: req.request_tag.clone(), message: "offline".into() })
    });
    let inners: [(&str, SharedBackend); 2] = [("cold", Arc::new(RuleMock::synthetic())), ("warm", Arc::new(offline.clone()))];
    let mut outputs = Vec::new();
    for (label, inner) in inners {
        let replay = Arc::new(ReplayBackend::new(&dir, inner).expect("cache dir"));
        let pipeline = Pipeline::new(spec.registry.clone(), StageBackends::uniform(replay), PipelineConfig::default());
        let out = pipeline.run_batch(all_tasks(&corpus, &factors, Mode::Multistage), &corpus).await.expect("valid tasks");
        let files = std::fs::read_dir(&dir).expect("cache dir").count();
        println!("{label}: {} traces, {} failed, {files} cache files", out.traces.len(), out.failed);
        outputs.push(serde_json::to_string(&out.traces).expect("traces serialize"));
    }
    println!("identical: {}, offline calls: {}", outputs[0] == outputs[1], offline.calls());
    std::fs::remove_dir_all(&dir).ok();
}
