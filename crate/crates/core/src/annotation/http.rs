use std::collections::BTreeMap;
use std::future::Future;
use std::path::PathBuf;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::{StatusCode, Uri};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::{DateTime, Utc};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use tower_http::services::ServeDir;

use super::{AnnotationError, AnnotationService, Arm, StudyConfig};

type Shared = Arc<AnnotationService>;

#[derive(Debug, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unlock_at: Option<DateTime<Utc>>,
}

impl IntoResponse for AnnotationError {
    fn into_response(self) -> Response {
        let status = match &self {
            AnnotationError::NotFound(_) => StatusCode::NOT_FOUND,
            AnnotationError::Validation(_) => StatusCode::UNPROCESSABLE_ENTITY,
            AnnotationError::Conflict(_) | AnnotationError::OutOfOrder(_) | AnnotationError::Incomplete(_) => {
                StatusCode::CONFLICT
            }
            AnnotationError::Gated { .. } => StatusCode::LOCKED,
            AnnotationError::Storage(_) => StatusCode::INTERNAL_SERVER_ERROR,
            AnnotationError::BadRequest(_) => StatusCode::BAD_REQUEST,
        };
        let unlock_at = match &self {
            AnnotationError::Gated { unlock_at, .. } => *unlock_at,
            _ => None,
        };
        let body = ErrorBody {
            code: self.code().to_string(),
            message: self.to_string(),
            unlock_at,
        };
        (status, Json(body)).into_response()
    }
}

type ApiResult<T> = Result<T, AnnotationError>;

fn body<T: DeserializeOwned>(bytes: &[u8]) -> ApiResult<T> {
    serde_json::from_slice(bytes).map_err(|e| AnnotationError::BadRequest(format!("request body: {e}")))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct OpenSession {
    annotator_id: String,
    arm: Arm,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Decision {
    incident_id: String,
    factor_id: String,
    decision: bool,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Answers {
    answers: BTreeMap<String, i64>,
}

async fn create_study(State(s): State<Shared>, raw: Bytes) -> ApiResult<impl IntoResponse> {
    let config: StudyConfig = body(&raw)?;
    Ok((StatusCode::CREATED, Json(s.create_study(config)?)))
}

async fn get_study(State(s): State<Shared>, Path(id): Path<String>) -> ApiResult<impl IntoResponse> {
    Ok(Json(s.study(&id)?))
}

async fn open_session(State(s): State<Shared>, Path(id): Path<String>, raw: Bytes) -> ApiResult<impl IntoResponse> {
    let req: OpenSession = body(&raw)?;
    Ok(Json(s.open_session(&id, &req.annotator_id, req.arm)?))
}

async fn get_session(State(s): State<Shared>, Path(sid): Path<String>) -> ApiResult<impl IntoResponse> {
    Ok(Json(s.session(&sid)?))
}

async fn next_item(State(s): State<Shared>, Path(sid): Path<String>) -> ApiResult<impl IntoResponse> {
    Ok(Json(s.next_item(&sid)?))
}

async fn decision(State(s): State<Shared>, Path(sid): Path<String>, raw: Bytes) -> ApiResult<impl IntoResponse> {
    let d: Decision = body(&raw)?;
    Ok(Json(s.submit_decision(&sid, &d.incident_id, &d.factor_id, d.decision)?))
}

async fn questionnaire(State(s): State<Shared>, Path(sid): Path<String>, raw: Bytes) -> ApiResult<impl IntoResponse> {
    let a: Answers = body(&raw)?;
    s.submit_questionnaire(&sid, a.answers)?;
    Ok((StatusCode::CREATED, Json(serde_json::json!({ "ok": true }))))
}

async fn questions(State(s): State<Shared>) -> impl IntoResponse {
    Json(s.questionnaire().clone())
}

async fn report(State(s): State<Shared>, Path(id): Path<String>) -> ApiResult<impl IntoResponse> {
    Ok(Json(s.report(&id)?))
}

async fn events(State(s): State<Shared>, Path(id): Path<String>) -> ApiResult<impl IntoResponse> {
    Ok(Json(s.events(&id)?))
}

async fn api_not_found(uri: Uri) -> AnnotationError {
    AnnotationError::NotFound(format!("no route for {}", uri.path()))
}

/// The JSON API under `/api`, plus the UI bundle from `ui_dir` when given.
pub fn router(service: Shared, ui_dir: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/studies", post(create_study))
        .route("/studies/{id}", get(get_study))
        .route("/studies/{id}/sessions", post(open_session))
        .route("/studies/{id}/report", get(report))
        .route("/studies/{id}/events", get(events))
        .route("/sessions/{sid}", get(get_session))
        .route("/sessions/{sid}/next", get(next_item))
        .route("/sessions/{sid}/decision", post(decision))
        .route("/sessions/{sid}/questionnaire", post(questionnaire))
        .route("/questionnaire", get(questions))
        .fallback(api_not_found)
        .with_state(service);
    let app = Router::new().nest("/api", api);
    match ui_dir {
        Some(dir) => app.fallback_service(ServeDir::new(dir).append_index_html_on_directories(true)),
        None => app,
    }
}

pub async fn serve(
    listener: tokio::net::TcpListener,
    router: Router,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, router).with_graceful_shutdown(shutdown).await
}
