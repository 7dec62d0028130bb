//! Model backends and structured-output parsing.
//!
//! Every backend answers a [`PromptRequest`] with raw text. The remote
//! backend speaks the chat-completions HTTP shape; the mocks answer from
//! lexicons so pipelines can be checked against synthetic gold; the replay
//! layer memoizes any backend on disk.

mod mock;
mod payload;
mod remote;
mod replay;

use std::sync::Arc;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use mock::{FixtureBackend, NoisyRetriever, RuleMock, ScriptedBackend};
pub use payload::{
    extract_object, parse_final_verdict, parse_payload, ParsedPayload, PayloadError, PayloadErrorKind, PayloadKind,
    MENTIONED_KEY, WITHIN_KEY,
};
pub use remote::{RateLimiter, RemoteBackend, RemoteConfig, RetryPolicy};
pub use replay::ReplayBackend;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecodeParams {
    pub temperature: f64,
    pub max_output_tokens: u32,
}

impl Default for DecodeParams {
    fn default() -> Self {
        Self {
            temperature: 0.0,
            max_output_tokens: 1024,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PromptRequest {
    pub system_instruction: String,
    pub user_payload: String,
    pub decode_params: DecodeParams,
    /// Free-form label carried into errors and traces.
    pub request_tag: String,
    /// How the answer should be parsed; not part of the request identity.
    pub expected_payload: Option<PayloadKind>,
}

impl PromptRequest {
    /// Lowercase hex SHA-256 over the instruction, payload and decode parameters.
    pub fn cache_key(&self) -> String {
        let identity = serde_json::json!([
            self.system_instruction,
            self.user_payload,
            self.decode_params.temperature,
            self.decode_params.max_output_tokens,
        ]);
        hex::encode(Sha256::digest(identity.to_string().as_bytes()))
    }

    /// The prompt as one string, the way it would be typed into a single-turn interface.
    pub fn flattened(&self) -> String {
        format!("{}{}{}", self.system_instruction, crate::prompts::INPUT_SEPARATOR, self.user_payload)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenUsage {
    pub input: u64,
    pub output: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelResponse {
    pub raw_text: String,
    pub latency_ms: u64,
    pub backend_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token_usage: Option<TokenUsage>,
    /// HTTP attempts spent, including the successful one. 1 for local backends.
    pub attempts: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum BackendError {
    #[error("[{tag}] transport failure after {attempts} attempt(s): {message}")]
    Transport { tag: String, attempts: u32, message: String },
    #[error("[{tag}] request rejected with status {status}: {message}")]
    Request { tag: String, status: u16, message: String },
    #[error("[{tag}] unrecognized prompt envelope: {message}")]
    Envelope { tag: String, message: String },
    #[error("replay cache entry {key}: {message}")]
    Cache { key: String, message: String },
    #[error("[{tag}] {message}")]
    Failed { tag: String, message: String },
    #[error("backend configuration: {0}")]
    Config(String),
}

#[async_trait]
pub trait Backend: Send + Sync {
    fn id(&self) -> String;

    async fn complete(&self, req: &PromptRequest) -> Result<ModelResponse, BackendError>;
}

pub type SharedBackend = Arc<dyn Backend>;
