//! JSON HTTP API over a [`SessionStore`].
//!
//! Store calls block on file IO and per-session locks, so every handler runs
//! them on the blocking pool.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path as UrlPath, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::{Value, json};
use taskreflect_core::advisor::Reveal;
use taskreflect_core::ingest::{self, FrameDecoder, SamplingConfig};
use taskreflect_core::providers::ChatProvider;
use taskreflect_core::trace::ActionTrace;

use crate::error::ServiceError;
use crate::store::{SamplingSummary, SessionRecord, SessionState, SessionStore};

pub type DecoderFactory = fn(&Path) -> Box<dyn FrameDecoder>;

#[derive(Clone)]
pub struct AppState {
    pub store: Arc<SessionStore>,
    pub provider: Arc<dyn ChatProvider>,
    pub decoder_for: DecoderFactory,
}

impl AppState {
    pub fn new(store: Arc<SessionStore>, provider: Arc<dyn ChatProvider>) -> Self {
        Self { store, provider, decoder_for: ingest::decoder_for }
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/analyze", post(analyze))
        .route("/sessions/{id}/actions", get(get_actions))
        .route("/sessions/{id}/suggestions", get(get_suggestions))
        .route("/sessions/{id}/suggestions/next", post(next_suggestion))
        .with_state(state)
}

/// The `{code, message}` error body with its status.
#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self { status, code, message: message.into() }
    }
}

impl From<ServiceError> for ApiError {
    fn from(e: ServiceError) -> Self {
        let status = match e {
            ServiceError::NotFound { .. } => StatusCode::NOT_FOUND,
            ServiceError::Conflict { .. } => StatusCode::CONFLICT,
            ServiceError::InvalidInput(_) => StatusCode::BAD_REQUEST,
            ServiceError::Io { .. } | ServiceError::Corrupt { .. } => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError::new(status, e.code(), e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "code": self.code, "message": self.message }))).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

async fn blocking<T: Send + 'static>(
    work: impl FnOnce() -> Result<T, ServiceError> + Send + 'static,
) -> ApiResult<T> {
    match tokio::task::spawn_blocking(work).await {
        Ok(result) => result.map_err(ApiError::from),
        Err(e) => Err(ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string())),
    }
}

#[derive(Debug, Deserialize)]
pub struct CreateSession {
    pub recording_path: PathBuf,
    #[serde(default)]
    pub config: Option<SamplingConfig>,
}

async fn create_session(
    State(state): State<AppState>,
    body: Result<Json<CreateSession>, JsonRejection>,
) -> ApiResult<(StatusCode, Json<Value>)> {
    let Json(body) = body.map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "invalid_request", e.body_text()))?;
    let store = state.store.clone();
    let result = tokio::task::spawn_blocking(move || {
        store.create_session(&body.recording_path, body.config.unwrap_or_default())
    })
    .await
    .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))?;
    match result {
        Ok(record) => Ok((StatusCode::CREATED, Json(json!({ "session_id": record.session_id })))),
        Err(e @ ServiceError::Io { .. }) => Err(ApiError::new(StatusCode::BAD_REQUEST, "unreadable_recording", e.to_string())),
        Err(e) => Err(e.into()),
    }
}

/// Reveal progress without the items themselves.
#[derive(Debug, Clone, Serialize)]
pub struct QueueProgress {
    pub total: usize,
    pub revealed: usize,
}

/// A session record as served: no frame data, no unrevealed suggestions.
#[derive(Debug, Clone, Serialize)]
pub struct SessionView {
    pub session_id: String,
    pub state: SessionState,
    pub recording_path: PathBuf,
    pub config: SamplingConfig,
    pub sampling: Option<SamplingSummary>,
    pub timings: std::collections::BTreeMap<String, u64>,
    pub error_detail: Option<String>,
    pub trace: Option<ActionTrace>,
    pub suggestions: Option<QueueProgress>,
}

impl From<SessionRecord> for SessionView {
    fn from(r: SessionRecord) -> Self {
        Self {
            suggestions: r.queue.as_ref().map(|q| QueueProgress { total: q.items.len(), revealed: q.revealed }),
            session_id: r.session_id,
            state: r.state,
            recording_path: r.recording_path,
            config: r.config,
            sampling: r.sampling,
            timings: r.timings,
            error_detail: r.error_detail,
            trace: r.trace,
        }
    }
}

async fn get_session(State(state): State<AppState>, UrlPath(id): UrlPath<String>) -> ApiResult<Json<SessionView>> {
    let store = state.store.clone();
    let record = blocking(move || store.load(&id)).await?;
    Ok(Json(record.into()))
}

async fn analyze(
    State(state): State<AppState>,
    UrlPath(id): UrlPath<String>,
) -> ApiResult<(StatusCode, Json<Value>)> {
    let store = state.store.clone();
    let claim_id = id.clone();
    let record = blocking(move || store.claim_for_analysis(&claim_id)).await?;

    let AppState { store, provider, decoder_for } = state;
    tokio::task::spawn_blocking(move || {
        let decoder = decoder_for(&record.recording_path);
        if let Err(e) = store.execute_claimed(&id, provider.as_ref(), decoder.as_ref()) {
            tracing::error!(session = %id, error = %e, "analysis could not update the session");
        }
    });
    Ok((StatusCode::ACCEPTED, Json(json!({ "state": SessionState::Extracting }))))
}

async fn get_actions(State(state): State<AppState>, UrlPath(id): UrlPath<String>) -> ApiResult<Json<Value>> {
    let store = state.store.clone();
    let record = blocking(move || store.load(&id)).await?;
    match record.trace {
        Some(trace) => Ok(Json(json!({ "actions": trace.actions }))),
        None => Err(ApiError::new(
            StatusCode::CONFLICT,
            "conflict",
            format!("session {} is {}; no trace yet", record.session_id, record.state),
        )),
    }
}

async fn next_suggestion(State(state): State<AppState>, UrlPath(id): UrlPath<String>) -> ApiResult<Json<Value>> {
    let store = state.store.clone();
    let revealed = blocking(move || store.reveal_next(&id)).await?;
    Ok(Json(match revealed.reveal {
        Reveal::Item { index, assessment } => json!({
            "index": index,
            "suggestion": assessment,
            "remaining": revealed.remaining,
        }),
        Reveal::Exhausted => json!({ "exhausted": true }),
    }))
}

async fn get_suggestions(State(state): State<AppState>, UrlPath(id): UrlPath<String>) -> ApiResult<Json<Value>> {
    let store = state.store.clone();
    let queue = blocking(move || store.revealed(&id)).await?;
    Ok(Json(json!({ "items": queue.items, "revealed": queue.revealed })))
}
