use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::Instant;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};

use super::{Backend, BackendError, DecodeParams, ModelResponse, PromptRequest, SharedBackend, TokenUsage};

/// Metadata stored next to each cached response.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct Sidecar {
    decode_params: DecodeParams,
    recorded_at: String,
    inner_backend: String,
    #[serde(default)]
    token_usage: Option<TokenUsage>,
}

/// Content-addressed response cache in front of another backend.
///
/// `<dir>/<key>.txt` holds the raw text and `<dir>/<key>.json` the sidecar,
/// where `<key>` is [`PromptRequest::cache_key`]. Concurrent misses on the
/// same key make a single inner call.
pub struct ReplayBackend {
    dir: PathBuf,
    inner: SharedBackend,
    locks: Mutex<HashMap<String, Arc<tokio::sync::Mutex<()>>>>,
}

impl ReplayBackend {
    pub fn new(dir: impl Into<PathBuf>, inner: SharedBackend) -> Result<Self, BackendError> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir)
            .map_err(|e| BackendError::Config(format!("replay cache {}: {e}", dir.display())))?;
        Ok(Self {
            dir,
            inner,
            locks: Mutex::new(HashMap::new()),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn paths(&self, key: &str) -> (PathBuf, PathBuf) {
        (self.dir.join(format!("{key}.txt")), self.dir.join(format!("{key}.json")))
    }

    fn lock_for(&self, key: &str) -> Arc<tokio::sync::Mutex<()>> {
        self.locks
            .lock()
            .expect("replay lock table")
            .entry(key.to_string())
            .or_default()
            .clone()
    }

    fn read(&self, key: &str) -> Result<Option<(String, Sidecar)>, BackendError> {
        let (text_path, meta_path) = self.paths(key);
        let corrupt = |message: String| BackendError::Cache {
            key: key.to_string(),
            message,
        };
        match (text_path.exists(), meta_path.exists()) {
            (false, false) => return Ok(None),
            (true, true) => {}
            _ => return Err(corrupt("text or sidecar file is missing".into())),
        }
        let bytes = std::fs::read(&text_path).map_err(|e| corrupt(e.to_string()))?;
        let text = String::from_utf8(bytes).map_err(|_| corrupt("raw text is not UTF-8".into()))?;
        let meta = std::fs::read_to_string(&meta_path).map_err(|e| corrupt(e.to_string()))?;
        let sidecar: Sidecar = serde_json::from_str(&meta).map_err(|e| corrupt(format!("sidecar: {e}")))?;
        Ok(Some((text, sidecar)))
    }

    fn write(&self, key: &str, req: &PromptRequest, resp: &ModelResponse) -> Result<(), BackendError> {
        let (text_path, meta_path) = self.paths(key);
        let fail = |e: std::io::Error| BackendError::Cache {
            key: key.to_string(),
            message: e.to_string(),
        };
        let sidecar = Sidecar {
            decode_params: req.decode_params,
            recorded_at: chrono::Utc::now().to_rfc3339(),
            inner_backend: resp.backend_id.clone(),
            token_usage: resp.token_usage,
        };
        // Sidecar last: its presence marks a complete entry.
        write_atomic(&text_path, resp.raw_text.as_bytes()).map_err(fail)?;
        let meta = serde_json::to_vec_pretty(&sidecar).expect("sidecar serializes");
        write_atomic(&meta_path, &meta).map_err(fail)
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(tmp, path)
}

#[async_trait]
impl Backend for ReplayBackend {
    fn id(&self) -> String {
        format!("replay({})", self.inner.id())
    }

    async fn complete(&self, req: &PromptRequest) -> Result<ModelResponse, BackendError> {
        let key = req.cache_key();
        let lock = self.lock_for(&key);
        let _guard = lock.lock().await;
        let started = Instant::now();
        let hit = |raw_text: String, token_usage: Option<TokenUsage>| ModelResponse {
            raw_text,
            latency_ms: started.elapsed().as_millis() as u64,
            backend_id: self.id(),
            token_usage,
            attempts: 1,
        };
        if let Some((text, sidecar)) = self.read(&key)? {
            return Ok(hit(text, sidecar.token_usage));
        }
        let resp = self.inner.complete(req).await?;
        self.write(&key, req, &resp)?;
        Ok(hit(resp.raw_text, resp.token_usage))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::ScriptedBackend;

    fn req(temp: f64) -> PromptRequest {
        PromptRequest {
            system_instruction: "s".into(),
            user_payload: "u".into(),
            decode_params: DecodeParams {
                temperature: temp,
                max_output_tokens: 16,
            },
            request_tag: "t".into(),
            expected_payload: None,
        }
    }

    #[tokio::test]
    async fn identical_requests_call_inner_once() {
        let dir = tempfile::tempdir().unwrap();
        let inner = ScriptedBackend::new("inner", |r| Ok(format!("answer {}", r.decode_params.temperature)));
        let replay = ReplayBackend::new(dir.path(), Arc::new(inner.clone())).unwrap();
        let a = replay.complete(&req(0.0)).await.unwrap();
        let b = replay.complete(&req(0.0)).await.unwrap();
        assert_eq!(inner.calls(), 1);
        assert_eq!(a.raw_text, b.raw_text);
        replay.complete(&req(0.5)).await.unwrap();
        assert_eq!(inner.calls(), 2);
    }

    #[tokio::test]
    async fn concurrent_misses_share_one_call() {
        let dir = tempfile::tempdir().unwrap();
        let inner = ScriptedBackend::new("inner", |_| Ok("x".into()));
        let replay = Arc::new(ReplayBackend::new(dir.path(), Arc::new(inner.clone())).unwrap());
        let handles: Vec<_> = (0..16)
            .map(|_| {
                let r = replay.clone();
                tokio::spawn(async move { r.complete(&req(0.0)).await.unwrap() })
            })
            .collect();
        for h in handles {
            h.await.unwrap();
        }
        assert_eq!(inner.calls(), 1);
    }

    #[tokio::test]
    async fn warm_cache_survives_restart_and_names_corrupt_keys() {
        let dir = tempfile::tempdir().unwrap();
        let inner = ScriptedBackend::new("inner", |_| Ok("stored".into()));
        ReplayBackend::new(dir.path(), Arc::new(inner)).unwrap().complete(&req(0.0)).await.unwrap();

        let failing = ScriptedBackend::new("down", |r| {
            Err(BackendError::Failed {
                tag: r.request_tag.clone(),
                message: "offline".into(),
            })
        });
        let warm = ReplayBackend::new(dir.path(), Arc::new(failing)).unwrap();
        assert_eq!(warm.complete(&req(0.0)).await.unwrap().raw_text, "stored");

        let key = req(0.0).cache_key();
        std::fs::write(dir.path().join(format!("{key}.json")), "{not json").unwrap();
        match warm.complete(&req(0.0)).await {
            Err(BackendError::Cache { key: k, .. }) => assert_eq!(k, key),
            other => panic!("{other:?}"),
        }
    }
}
