use std::collections::VecDeque;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use axum::extract::State;
use axum::http::{HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::post;
use axum::{Json, Router};
use sdoh::backend::{Backend, BackendError, DecodeParams, PromptRequest, RemoteBackend, RemoteConfig, RetryPolicy};
use serde_json::{json, Value};

/// Status and optional Retry-After value per call.
type Script = VecDeque<(u16, Option<&'static str>)>;

#[derive(Clone, Default)]
struct Fake {
    script: Arc<Mutex<Script>>,
    seen: Arc<Mutex<Vec<(HeaderMap, Value)>>>,
}

async fn completions(State(f): State<Fake>, headers: HeaderMap, Json(body): Json<Value>) -> Response {
    f.seen.lock().unwrap().push((headers, body));
    let (status, retry_after) = f.script.lock().unwrap().pop_front().unwrap_or((200, None));
    let status = StatusCode::from_u16(status).unwrap();
    if status.is_success() {
        return Json(json!({
            "choices": [{"message": {"role": "assistant", "content": "{\"Answer\": true}"}}],
            "usage": {"prompt_tokens": 12, "completion_tokens": 4}
        }))
        .into_response();
    }
    let mut resp = (status, "try later").into_response();
    if let Some(ra) = retry_after {
        resp.headers_mut().insert("retry-after", ra.parse().unwrap());
    }
    resp
}

async fn start(script: Vec<(u16, Option<&'static str>)>) -> (String, Fake) {
    let fake = Fake::default();
    fake.script.lock().unwrap().extend(script);
    let app = Router::new().route("/v1/chat/completions", post(completions)).with_state(fake.clone());
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(async move { axum::serve(listener, app).await.unwrap() });
    (format!("http://{addr}/v1"), fake)
}

fn backend(base_url: String, max_delay: Duration) -> RemoteBackend {
    RemoteBackend::new(RemoteConfig {
        base_url,
        api_key: Some("secret".into()),
        model: "test-model".into(),
        timeout: Duration::from_secs(10),
        retry: RetryPolicy {
            max_attempts: 4,
            base_delay: Duration::from_millis(5),
            max_delay,
            jitter: true,
        },
        requests_per_minute: None,
    })
    .unwrap()
}

fn request() -> PromptRequest {
    PromptRequest {
        system_instruction: "system text".into(),
        user_payload: "user text".into(),
        decode_params: DecodeParams::default(),
        request_tag: "inc/job_problem/verification".into(),
        expected_payload: None,
    }
}

#[tokio::test]
async fn retries_rate_limits_then_succeeds() {
    let (url, fake) = start(vec![(429, None), (429, None), (200, None)]).await;
    let resp = backend(url, Duration::from_millis(50)).complete(&request()).await.unwrap();
    assert_eq!(resp.attempts, 3);
    assert_eq!(resp.raw_text, "{\"Answer\": true}");
    assert_eq!(resp.backend_id, "remote:test-model");
    assert_eq!(resp.token_usage.map(|u| (u.input, u.output)), Some((12, 4)));

    let seen = fake.seen.lock().unwrap();
    assert_eq!(seen.len(), 3);
    let (headers, body) = &seen[0];
    assert_eq!(headers["authorization"], "Bearer secret");
    assert_eq!(body["model"], "test-model");
    assert_eq!(body["messages"][0], json!({"role": "system", "content": "system text"}));
    assert_eq!(body["messages"][1], json!({"role": "user", "content": "user text"}));
    assert_eq!(body["temperature"], 0.0);
    assert_eq!(body["max_tokens"], 1024);
}

#[tokio::test]
async fn client_errors_are_not_retried() {
    let (url, fake) = start(vec![(401, None)]).await;
    match backend(url, Duration::from_millis(50)).complete(&request()).await {
        Err(BackendError::Request { status: 401, tag, .. }) => assert_eq!(tag, "inc/job_problem/verification"),
        other => panic!("{other:?}"),
    }
    assert_eq!(fake.seen.lock().unwrap().len(), 1);
}

#[tokio::test]
async fn server_errors_exhaust_attempts() {
    let (url, fake) = start(vec![(500, None); 10]).await;
    match backend(url, Duration::from_millis(20)).complete(&request()).await {
        Err(BackendError::Transport { attempts: 4, .. }) => {}
        other => panic!("{other:?}"),
    }
    assert_eq!(fake.seen.lock().unwrap().len(), 4);
}

#[tokio::test]
async fn retry_after_is_honored() {
    let (url, _) = start(vec![(503, Some("1")), (200, None)]).await;
    let started = Instant::now();
    let resp = backend(url, Duration::from_secs(5)).complete(&request()).await.unwrap();
    assert_eq!(resp.attempts, 2);
    assert!(started.elapsed() >= Duration::from_secs(1));
}

#[tokio::test]
async fn unreachable_endpoint_is_a_transport_error() {
    let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    drop(listener);
    match backend(format!("http://{addr}/v1"), Duration::from_millis(10)).complete(&request()).await {
        Err(BackendError::Transport { attempts: 4, .. }) => {}
        other => panic!("{other:?}"),
    }
}
