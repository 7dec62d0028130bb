#![allow(dead_code)]

use std::path::PathBuf;
use std::sync::Arc;

use chrono::{DateTime, Utc};
use reqwest::StatusCode;
use serde_json::Value;
use tokio::sync::oneshot;

use sdoh::annotation::{router, serve, AnnotationService};
use sdoh::backend::RuleMock;
use sdoh::corpus::{generate_corpus, FactorRegistry, GeneratorSpec, IncidentRecord};
use sdoh::pipeline::{all_tasks, Mode, Pipeline, PipelineConfig, StageBackends, StageTrace};

pub const FACTORS: [&str; 4] = ["alcohol_problem", "job_problem", "financial_problem", "mental_health_problem"];

pub fn factor_ids() -> Vec<String> {
    FACTORS.iter().map(|s| s.to_string()).collect()
}

pub fn t0() -> DateTime<Utc> {
    DateTime::parse_from_rfc3339("2024-03-01T09:00:00Z").unwrap().with_timezone(&Utc)
}

/// Synthetic corpus plus rule-mock multistage traces for it.
pub async fn fixture(seed: u64, incidents: usize) -> (Vec<IncidentRecord>, Vec<StageTrace>) {
    let corpus = generate_corpus(&GeneratorSpec::new(seed, incidents)).unwrap().records;
    let pipeline = Pipeline::new(
        FactorRegistry::builtin(),
        StageBackends::uniform(Arc::new(RuleMock::synthetic())),
        PipelineConfig::default(),
    );
    let out = pipeline.run_batch(all_tasks(&corpus, &factor_ids(), Mode::Multistage), &corpus).await.unwrap();
    (corpus, out.traces)
}

pub struct Server {
    pub base: String,
    pub client: reqwest::Client,
    stop: Option<oneshot::Sender<()>>,
    task: tokio::task::JoinHandle<std::io::Result<()>>,
}

impl Server {
    pub async fn start(service: Arc<AnnotationService>, ui_dir: Option<PathBuf>) -> Self {
        let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
        let base = format!("http://{}", listener.local_addr().unwrap());
        let (tx, rx) = oneshot::channel();
        let task = tokio::spawn(serve(listener, router(service, ui_dir), async {
            let _ = rx.await;
        }));
        Server { base, client: reqwest::Client::new(), stop: Some(tx), task }
    }

    pub async fn stop(mut self) {
        let _ = self.stop.take().unwrap().send(());
        self.task.await.unwrap().unwrap();
    }

    pub async fn get(&self, path: &str) -> (StatusCode, Value) {
        let resp = self.client.get(format!("{}{path}", self.base)).send().await.unwrap();
        let status = resp.status();
        (status, resp.json().await.unwrap_or(Value::Null))
    }

    pub async fn post(&self, path: &str, body: &Value) -> (StatusCode, Value) {
        self.post_raw(path, body.to_string()).await
    }

    pub async fn post_raw(&self, path: &str, body: String) -> (StatusCode, Value) {
        let resp = self
            .client
            .post(format!("{}{path}", self.base))
            .header("content-type", "application/json")
            .body(body)
            .send()
            .await
            .unwrap();
        let status = resp.status();
        (status, resp.json().await.unwrap_or(Value::Null))
    }
}

/// Stands in for `rule-mock` on a warm cache: same id, but any call fails.
pub fn offline_rule_mock() -> sdoh::backend::ScriptedBackend {
    sdoh::backend::ScriptedBackend::new("rule-mock", |req| {
        Err(sdoh::backend::BackendError::Failed {
            tag: req.request_tag.clone(),
            message: "offline".into(),
        })
    })
}

/// Multistage run over every task through a replay cache at `dir`, serialized as trace JSONL.
pub async fn replay_run(
    dir: &std::path::Path,
    inner: sdoh::backend::SharedBackend,
    corpus: &[IncidentRecord],
    width: usize,
) -> String {
    let replay = Arc::new(sdoh::backend::ReplayBackend::new(dir, inner).unwrap());
    let pipeline = Pipeline::new(
        FactorRegistry::builtin(),
        StageBackends::uniform(replay),
        PipelineConfig { width, ..PipelineConfig::default() },
    );
    let out = pipeline.run_batch(all_tasks(corpus, &factor_ids(), Mode::Multistage), corpus).await.unwrap();
    out.traces.iter().map(|t| serde_json::to_string(t).unwrap() + "\n").collect()
}
