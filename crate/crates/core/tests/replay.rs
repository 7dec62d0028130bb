mod common;

use std::sync::Arc;

use common::{factor_ids, fixture, offline_rule_mock, replay_run};
use sdoh::backend::RuleMock;
use sdoh::corpus::FactorRegistry;
use sdoh::pipeline::{all_tasks, Mode, Pipeline, PipelineConfig, StageBackends};

#[tokio::test]
async fn warm_cache_reproduces_the_cold_run_without_the_model() {
    let (corpus, _) = fixture(5, 12).await;
    let cache = tempfile::tempdir().unwrap();
    let cold = replay_run(cache.path(), Arc::new(RuleMock::synthetic()), &corpus, 8).await;
    let entries = std::fs::read_dir(cache.path()).unwrap().count();
    assert!(entries > 0 && entries.is_multiple_of(2));

    let offline = offline_rule_mock();
    let warm = replay_run(cache.path(), Arc::new(offline.clone()), &corpus, 1).await;
    assert_eq!(offline.calls(), 0);
    assert_eq!(cold, warm);
    assert_eq!(std::fs::read_dir(cache.path()).unwrap().count(), entries);
}

#[tokio::test]
async fn a_miss_on_an_offline_backend_fails_only_that_task() {
    let (corpus, _) = fixture(5, 4).await;
    let cache = tempfile::tempdir().unwrap();
    replay_run(cache.path(), Arc::new(RuleMock::synthetic()), &corpus[..2], 8).await;

    let replay = Arc::new(sdoh::backend::ReplayBackend::new(cache.path(), Arc::new(offline_rule_mock())).unwrap());
    let pipeline = Pipeline::new(FactorRegistry::builtin(), StageBackends::uniform(replay), PipelineConfig::default());
    let tasks = all_tasks(&corpus, &factor_ids(), Mode::Multistage);
    let out = pipeline.run_batch(tasks, &corpus).await.unwrap();
    assert_eq!(out.succeeded, 8);
    assert_eq!(out.failed, 8);
    for t in &out.traces {
        let cached = corpus[..2].iter().any(|r| r.incident_id == t.incident_id);
        assert_eq!(t.succeeded(), cached, "{}", t.incident_id);
    }
}

#[tokio::test]
async fn a_torn_entry_is_reported_not_replayed() {
    let (corpus, _) = fixture(5, 1).await;
    let cache = tempfile::tempdir().unwrap();
    replay_run(cache.path(), Arc::new(RuleMock::synthetic()), &corpus, 1).await;
    for e in std::fs::read_dir(cache.path()).unwrap() {
        let p = e.unwrap().path();
        if p.extension().is_some_and(|x| x == "json") {
            std::fs::remove_file(p).unwrap();
        }
    }
    let replay = Arc::new(sdoh::backend::ReplayBackend::new(cache.path(), Arc::new(RuleMock::synthetic())).unwrap());
    let pipeline = Pipeline::new(FactorRegistry::builtin(), StageBackends::uniform(replay), PipelineConfig::default());
    let out = pipeline.run_batch(all_tasks(&corpus, &factor_ids(), Mode::Multistage), &corpus).await.unwrap();
    assert!(out.traces.iter().all(|t| !t.succeeded()));
    assert!(out.traces.iter().all(|t| t.error.as_ref().unwrap().message.contains("sidecar")));
}
