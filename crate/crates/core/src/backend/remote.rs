use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use async_trait::async_trait;
use rand::Rng;
use serde::Deserialize;
use serde_json::json;

use super::{Backend, BackendError, ModelResponse, PromptRequest, TokenUsage};

#[derive(Debug, Clone, PartialEq)]
pub struct RetryPolicy {
    /// Total attempts including the first one.
    pub max_attempts: u32,
    pub base_delay: Duration,
    pub max_delay: Duration,
    pub jitter: bool,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 5,
            base_delay: Duration::from_millis(500),
            max_delay: Duration::from_secs(30),
            jitter: true,
        }
    }
}

impl RetryPolicy {
    /// Delay before attempt `attempt + 1`, given `attempt` failures so far (1-based).
    pub fn delay(&self, attempt: u32) -> Duration {
        let exp = self.base_delay.saturating_mul(2u32.saturating_pow(attempt.saturating_sub(1)));
        let capped = exp.min(self.max_delay);
        if self.jitter {
            capped.mul_f64(rand::thread_rng().gen_range(0.5..=1.0))
        } else {
            capped
        }
    }
}

/// Token bucket shared by every task that talks to one endpoint.
#[derive(Debug)]
pub struct RateLimiter {
    capacity: f64,
    per_sec: f64,
    state: Mutex<(f64, Instant)>,
}

impl RateLimiter {
    pub fn per_minute(requests: u32) -> Self {
        let capacity = f64::from(requests.max(1));
        Self {
            capacity,
            per_sec: capacity / 60.0,
            state: Mutex::new((capacity, Instant::now())),
        }
    }

    pub async fn acquire(&self) {
        loop {
            let wait = {
                let mut state = self.state.lock().expect("rate limiter lock");
                let now = Instant::now();
                let (tokens, last) = &mut *state;
                *tokens = (*tokens + now.duration_since(*last).as_secs_f64() * self.per_sec).min(self.capacity);
                *last = now;
                if *tokens >= 1.0 {
                    *tokens -= 1.0;
                    return;
                }
                Duration::from_secs_f64((1.0 - *tokens) / self.per_sec)
            };
            tokio::time::sleep(wait).await;
        }
    }
}

#[derive(Debug, Clone)]
pub struct RemoteConfig {
    /// Base URL up to and including the API version, e.g. `https://api.openai.com/v1`.
    pub base_url: String,
    pub api_key: Option<String>,
    pub model: String,
    pub timeout: Duration,
    pub retry: RetryPolicy,
    pub requests_per_minute: Option<u32>,
}

impl RemoteConfig {
    /// Reads `MODEL_API_BASE`, `MODEL_API_KEY` and `MODEL_NAME`.
    pub fn from_env() -> Result<Self, BackendError> {
        let var = |k: &str| std::env::var(k).ok().filter(|v| !v.trim().is_empty());
        let base_url = var("MODEL_API_BASE").ok_or_else(|| BackendError::Config("MODEL_API_BASE is not set".into()))?;
        let model = var("MODEL_NAME").ok_or_else(|| BackendError::Config("MODEL_NAME is not set".into()))?;
        Ok(Self {
            base_url,
            api_key: var("MODEL_API_KEY"),
            model,
            timeout: Duration::from_secs(120),
            retry: RetryPolicy::default(),
            requests_per_minute: None,
        })
    }
}

/// Chat-completions client: `POST {base}/chat/completions` with a system and a user message.
#[derive(Debug, Clone)]
pub struct RemoteBackend {
    config: RemoteConfig,
    client: reqwest::Client,
    limiter: Option<Arc<RateLimiter>>,
}

#[derive(Deserialize)]
struct CompletionBody {
    choices: Vec<Choice>,
    usage: Option<Usage>,
}

#[derive(Deserialize)]
struct Choice {
    message: Message,
}

#[derive(Deserialize)]
struct Message {
    content: Option<String>,
}

#[derive(Deserialize)]
struct Usage {
    prompt_tokens: Option<u64>,
    completion_tokens: Option<u64>,
}

enum Attempt {
    Done(String, Option<TokenUsage>),
    Retry(String, Option<Duration>),
    Fatal(u16, String),
}

impl RemoteBackend {
    pub fn new(config: RemoteConfig) -> Result<Self, BackendError> {
        let client = reqwest::Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| BackendError::Config(e.to_string()))?;
        let limiter = config.requests_per_minute.map(|rpm| Arc::new(RateLimiter::per_minute(rpm)));
        Ok(Self {
            config,
            client,
            limiter,
        })
    }

    /// Shares `limiter` with other backends hitting the same endpoint.
    pub fn with_limiter(mut self, limiter: Arc<RateLimiter>) -> Self {
        self.limiter = Some(limiter);
        self
    }

    fn endpoint(&self) -> String {
        format!("{}/chat/completions", self.config.base_url.trim_end_matches('/'))
    }

    async fn attempt(&self, body: &serde_json::Value) -> Attempt {
        let mut builder = self.client.post(self.endpoint()).json(body);
        if let Some(key) = &self.config.api_key {
            builder = builder.bearer_auth(key);
        }
        let resp = match builder.send().await {
            Ok(r) => r,
            Err(e) => return Attempt::Retry(e.to_string(), None),
        };
        let status = resp.status();
        let retry_after = resp
            .headers()
            .get(reqwest::header::RETRY_AFTER)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.trim().parse::<u64>().ok())
            .map(Duration::from_secs);
        let text = match resp.text().await {
            Ok(t) => t,
            Err(e) => return Attempt::Retry(e.to_string(), None),
        };
        if status.as_u16() == 429 || status.is_server_error() {
            return Attempt::Retry(format!("status {status}: {text}"), retry_after);
        }
        if !status.is_success() {
            return Attempt::Fatal(status.as_u16(), text);
        }
        match serde_json::from_str::<CompletionBody>(&text) {
            Ok(body) => {
                let content = body
                    .choices
                    .into_iter()
                    .next()
                    .and_then(|c| c.message.content)
                    .unwrap_or_default();
                let usage = body.usage.map(|u| TokenUsage {
                    input: u.prompt_tokens.unwrap_or(0),
                    output: u.completion_tokens.unwrap_or(0),
                });
                Attempt::Done(content, usage)
            }
            Err(e) => Attempt::Fatal(status.as_u16(), format!("unexpected response body: {e}")),
        }
    }
}

#[async_trait]
impl Backend for RemoteBackend {
    fn id(&self) -> String {
        format!("remote:{}", self.config.model)
    }

    async fn complete(&self, req: &PromptRequest) -> Result<ModelResponse, BackendError> {
        let body = json!({
            "model": self.config.model,
            "messages": [
                {"role": "system", "content": req.system_instruction},
                {"role": "user", "content": req.user_payload},
            ],
            "temperature": req.decode_params.temperature,
            "max_tokens": req.decode_params.max_output_tokens,
        });
        let started = Instant::now();
        let max = self.config.retry.max_attempts.max(1);
        let mut attempts = 0;
        loop {
            if let Some(l) = &self.limiter {
                l.acquire().await;
            }
            attempts += 1;
            match self.attempt(&body).await {
                Attempt::Done(raw_text, token_usage) => {
                    return Ok(ModelResponse {
                        raw_text,
                        latency_ms: started.elapsed().as_millis() as u64,
                        backend_id: self.id(),
                        token_usage,
                        attempts,
                    })
                }
                Attempt::Fatal(status, message) => {
                    return Err(BackendError::Request {
                        tag: req.request_tag.clone(),
                        status,
                        message,
                    })
                }
                Attempt::Retry(message, retry_after) => {
                    if attempts >= max {
                        return Err(BackendError::Transport {
                            tag: req.request_tag.clone(),
                            attempts,
                            message,
                        });
                    }
                    let mut delay = self.config.retry.delay(attempts);
                    if let Some(ra) = retry_after {
                        delay = delay.max(ra.min(self.config.retry.max_delay));
                    }
                    tracing::debug!(tag = %req.request_tag, attempts, ?delay, "retrying: {message}");
                    tokio::time::sleep(delay).await;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backoff_is_exponential_and_capped() {
        let p = RetryPolicy {
            max_attempts: 10,
            base_delay: Duration::from_millis(100),
            max_delay: Duration::from_millis(1000),
            jitter: false,
        };
        assert_eq!(p.delay(1), Duration::from_millis(100));
        assert_eq!(p.delay(2), Duration::from_millis(200));
        assert_eq!(p.delay(4), Duration::from_millis(800));
        assert_eq!(p.delay(5), Duration::from_millis(1000));
        assert_eq!(p.delay(40), Duration::from_millis(1000));
        let j = RetryPolicy { jitter: true, ..p };
        for _ in 0..50 {
            let d = j.delay(3);
            assert!(d >= Duration::from_millis(200) && d <= Duration::from_millis(400));
        }
    }

    #[tokio::test]
    async fn limiter_allows_burst_then_waits() {
        let l = RateLimiter::per_minute(600);
        let t = Instant::now();
        for _ in 0..600 {
            l.acquire().await;
        }
        assert!(t.elapsed() < Duration::from_millis(500));
        let t = Instant::now();
        l.acquire().await;
        assert!(t.elapsed() >= Duration::from_millis(50));
    }
}
