//! Sends one verification prompt to an OpenAI-compatible endpoint.
//!
//! MODEL_API_BASE=http://localhost:8000/v1 MODEL_NAME=llama cargo run --example remote_backend

use sdoh::backend::{parse_payload, Backend, RemoteBackend, RemoteConfig};
use sdoh::corpus::FactorRegistry;
use sdoh::prompts::{render, Bindings, Placeholder, PromptKind};

#[tokio::main]
async fn main() {
    let config = match RemoteConfig::from_env() {
        Ok(c) => c,
        Err(e) => {
            eprintln!("{e}; set MODEL_API_BASE and MODEL_NAME to try a live model");
            return;
        }
    };
    let backend = RemoteBackend::new(config).expect("client builds");
    let registry = FactorRegistry::builtin();
    let factor = registry.get("job_problem").expect("builtin factor");
    let bindings = Bindings::for_factor(factor).with(Placeholder::TargetSentence, "He was laid off last Friday.");
    let req = render(PromptKind::Verification, &bindings).expect("all slots bound");
    match backend.complete(&req).await {
        Ok(resp) => {
            println!("{} after {} attempt(s), {} ms", resp.backend_id, resp.attempts, resp.latency_ms);
            println!("raw: {}", resp.raw_text);
            println!("parsed: {:?}", parse_payload(&resp.raw_text, PromptKind::Verification.expected_payload()));
        }
        Err(e) => eprintln!("request failed: {e}"),
    }
}
