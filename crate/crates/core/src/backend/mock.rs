use std::collections::BTreeMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use async_trait::async_trait;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;
use sha2::{Digest, Sha256};

use super::{Backend, BackendError, ModelResponse, PromptRequest};
use crate::corpus::{temporal_offset, FactorRegistry, ReportTag, TWO_WEEK_WINDOW_DAYS};
use crate::prompts::{factor_block, tagged_block, PromptKind};
use crate::segmenter::segment;

fn local_response(backend_id: String, raw_text: String) -> ModelResponse {
    ModelResponse {
        raw_text,
        latency_ms: 0,
        backend_id,
        token_usage: None,
        attempts: 1,
    }
}

/// Returns the same text for every request.
#[derive(Debug, Clone)]
pub struct FixtureBackend {
    text: String,
}

impl FixtureBackend {
    pub fn new(text: impl Into<String>) -> Self {
        Self { text: text.into() }
    }
}

#[async_trait]
impl Backend for FixtureBackend {
    fn id(&self) -> String {
        "mock".into()
    }

    async fn complete(&self, _req: &PromptRequest) -> Result<ModelResponse, BackendError> {
        Ok(local_response(self.id(), self.text.clone()))
    }
}

type Script = dyn Fn(&PromptRequest) -> Result<String, BackendError> + Send + Sync;

/// Answers with a closure and counts calls.
#[derive(Clone)]
pub struct ScriptedBackend {
    id: String,
    script: Arc<Script>,
    calls: Arc<AtomicUsize>,
}

impl ScriptedBackend {
    pub fn new(
        id: impl Into<String>,
        script: impl Fn(&PromptRequest) -> Result<String, BackendError> + Send + Sync + 'static,
    ) -> Self {
        Self {
            id: id.into(),
            script: Arc::new(script),
            calls: Arc::new(AtomicUsize::new(0)),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl std::fmt::Debug for ScriptedBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ScriptedBackend").field("id", &self.id).field("calls", &self.calls()).finish()
    }
}

#[async_trait]
impl Backend for ScriptedBackend {
    fn id(&self) -> String {
        self.id.clone()
    }

    async fn complete(&self, req: &PromptRequest) -> Result<ModelResponse, BackendError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        (self.script)(req).map(|text| local_response(self.id(), text))
    }
}

/// Deterministic oracle that answers every prompt kind from factor lexicons
/// and the temporal phrase table of the synthetic corpus.
#[derive(Debug, Clone)]
pub struct RuleMock {
    registry: FactorRegistry,
    lexicons: BTreeMap<String, Vec<String>>,
}

struct Envelope<'a> {
    kind: PromptKind,
    factor_id: String,
    body: &'a str,
}

impl RuleMock {
    pub fn new(registry: FactorRegistry, lexicons: BTreeMap<String, Vec<String>>) -> Self {
        let lexicons = lexicons
            .into_iter()
            .map(|(k, v)| (k, v.into_iter().map(|p| p.to_lowercase()).collect()))
            .collect();
        Self { registry, lexicons }
    }

    /// Built-in registry with the synthetic generator's lexicons.
    pub fn synthetic() -> Self {
        Self::new(FactorRegistry::builtin(), crate::corpus::default_lexicons())
    }

    fn open<'a>(&self, req: &'a PromptRequest) -> Result<Envelope<'a>, BackendError> {
        let bad = |message: &str| BackendError::Envelope {
            tag: req.request_tag.clone(),
            message: message.to_string(),
        };
        let kind = PromptKind::detect(&req.system_instruction).ok_or_else(|| bad("unknown instruction"))?;
        let (name, _) = factor_block(&req.user_payload).ok_or_else(|| bad("no factor definition block"))?;
        let factor = self.registry.by_name(name).ok_or_else(|| bad("unknown factor name"))?;
        if !self.lexicons.contains_key(&factor.factor_id) {
            return Err(bad("no lexicon for factor"));
        }
        let tag = if kind == PromptKind::Verification { "SENTENCE" } else { "CONTEXT" };
        let body = tagged_block(&req.user_payload, tag).ok_or_else(|| bad("no input block"))?;
        Ok(Envelope {
            kind,
            factor_id: factor.factor_id.clone(),
            body,
        })
    }

    fn mentions(&self, factor_id: &str, text: &str) -> bool {
        let lower = text.to_lowercase();
        self.lexicons[factor_id].iter().any(|p| lower.contains(p.as_str()))
    }

    fn in_window(text: &str) -> bool {
        temporal_offset(text).is_some_and(|d| d <= TWO_WEEK_WINDOW_DAYS)
    }

    fn hits(&self, factor_id: &str, context: &str) -> Vec<String> {
        segment(ReportTag::Cme, context)
            .into_iter()
            .map(|s| s.text)
            .filter(|s| self.mentions(factor_id, s))
            .collect()
    }

    fn answer(&self, env: &Envelope<'_>) -> String {
        let f = env.factor_id.as_str();
        match env.kind {
            PromptKind::Retrieval => json!({ "Relevant": self.hits(f, env.body) }).to_string(),
            PromptKind::Verification => json!({ "Answer": self.mentions(f, env.body) }).to_string(),
            PromptKind::Extraction => {
                let any = env.body.lines().any(Self::in_window);
                json!({ "Happened within two weeks": any }).to_string()
            }
            PromptKind::End2End => {
                let any = self.hits(f, env.body).iter().any(|s| Self::in_window(s));
                json!({ "Happened within two weeks": any }).to_string()
            }
            PromptKind::Cot => {
                let hits = self.hits(f, env.body);
                if hits.is_empty() {
                    json!({ "Mentioned or Not": false }).to_string()
                } else {
                    let within = hits.iter().any(|s| Self::in_window(s));
                    json!({
                        "Mentioned or Not": true,
                        "Within Two Weeks or Not": within,
                        "Relevant Sentences": hits,
                    })
                    .to_string()
                }
            }
            PromptKind::Reasoning => {
                let hits = self.hits(f, env.body);
                let within = hits.iter().any(|s| Self::in_window(s));
                let verdict = if within { "True" } else { "False" };
                format!(
                    "<think>The report contains {} sentence(s) about the factor; {} fall within the two weeks before the death.</think>\nFinal answer: {verdict}",
                    hits.len(),
                    hits.iter().filter(|s| Self::in_window(s)).count()
                )
            }
        }
    }
}

#[async_trait]
impl Backend for RuleMock {
    fn id(&self) -> String {
        "rule-mock".into()
    }

    async fn complete(&self, req: &PromptRequest) -> Result<ModelResponse, BackendError> {
        let env = self.open(req)?;
        Ok(local_response(self.id(), self.answer(&env)))
    }
}

/// Retriever that perturbs the rule mock's retrieval answers: each lexicon hit
/// is dropped with probability `drop_rate`, each other sentence is injected
/// with probability `inject_rate`. Other prompt kinds go to the rule mock.
/// Noise is seeded per request, so identical requests get identical answers.
#[derive(Debug, Clone)]
pub struct NoisyRetriever {
    inner: RuleMock,
    drop_rate: f64,
    inject_rate: f64,
    seed: u64,
}

impl NoisyRetriever {
    pub fn new(inner: RuleMock, drop_rate: f64, inject_rate: f64, seed: u64) -> Self {
        Self {
            inner,
            drop_rate,
            inject_rate,
            seed,
        }
    }
}

#[async_trait]
impl Backend for NoisyRetriever {
    fn id(&self) -> String {
        format!("noisy-mock(drop={},inject={},seed={})", self.drop_rate, self.inject_rate, self.seed)
    }

    async fn complete(&self, req: &PromptRequest) -> Result<ModelResponse, BackendError> {
        let env = self.inner.open(req)?;
        if env.kind != PromptKind::Retrieval {
            return Ok(local_response(self.id(), self.inner.answer(&env)));
        }
        let mut hasher = Sha256::new();
        hasher.update(self.seed.to_le_bytes());
        hasher.update(req.cache_key().as_bytes());
        let mut rng = ChaCha8Rng::from_seed(hasher.finalize().into());
        let picked: Vec<String> = segment(ReportTag::Cme, env.body)
            .into_iter()
            .map(|s| s.text)
            .filter(|s| {
                let roll: f64 = rng.gen();
                if self.inner.mentions(&env.factor_id, s) {
                    roll >= self.drop_rate
                } else {
                    roll < self.inject_rate
                }
            })
            .collect();
        Ok(local_response(self.id(), json!({ "Relevant": picked }).to_string()))
    }
}
