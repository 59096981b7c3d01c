//! JSON HTTP API over a [`SessionManager`].
//!
//! ```text
//! POST /sessions                          {snapshotId, prefsPath?, rulesPath?}
//! GET  /sessions/{id}
//! GET  /sessions/{id}/elements/{eid}/code
//! POST /sessions/{id}/toggle              {elementId, enabled, revision}
//! POST /sessions/{id}/apply               {revision}
//! POST /sessions/{id}/save                {outDir}
//! GET  /sessions/{id}/report
//! ```
//!
//! Errors are `{"code": ..., "message": ...}` with a matching status.

use std::path::PathBuf;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::{SessionError, SessionManager};
use crate::model::{ElementId, SnapshotId};

#[derive(Debug, Serialize, Deserialize, PartialEq, Eq)]
pub struct ApiError {
    pub code: String,
    pub message: String,
}

impl ApiError {
    fn bad_request(message: impl Into<String>) -> Self {
        ApiError {
            code: "bad_request".into(),
            message: message.into(),
        }
    }
}

fn status_of(code: &str) -> StatusCode {
    match code {
        "unknown_session" | "unknown_element" | "unknown_snapshot" => StatusCode::NOT_FOUND,
        "conflict" => StatusCode::CONFLICT,
        "bad_request" | "invalid_config" => StatusCode::BAD_REQUEST,
        "rewrite_failed" => StatusCode::UNPROCESSABLE_ENTITY,
        _ => StatusCode::INTERNAL_SERVER_ERROR,
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (status_of(&self.code), Json(self)).into_response()
    }
}

impl From<SessionError> for ApiError {
    fn from(e: SessionError) -> Self {
        ApiError {
            code: e.code().to_owned(),
            message: e.to_string(),
        }
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

fn body<T: DeserializeOwned>(bytes: &Bytes) -> Result<T, ApiError> {
    serde_json::from_slice(bytes).map_err(|e| ApiError::bad_request(e.to_string()))
}

#[derive(Debug, Deserialize)]
#[serde(rename_all = "camelCase")]
struct CreateRequest {
    snapshot_id: SnapshotId,
    #[serde(default)]
    prefs_path: Option<PathBuf>,
    #[serde(default)]
    rules_path: Option<PathBuf>,
}

#[derive(Debug, Deserialize)]
#[serde(rename_all = "camelCase")]
struct ToggleRequest {
    element_id: ElementId,
    enabled: bool,
    revision: u64,
}

#[derive(Debug, Deserialize)]
struct ApplyRequest {
    revision: u64,
}

#[derive(Debug, Deserialize)]
#[serde(rename_all = "camelCase")]
struct SaveRequest {
    out_dir: PathBuf,
}

type Manager = State<Arc<SessionManager>>;

async fn create(State(m): Manager, bytes: Bytes) -> Result<(StatusCode, Json<super::StateDocument>), ApiError> {
    let req: CreateRequest = body(&bytes)?;
    let state = m.create(&req.snapshot_id, req.rules_path, req.prefs_path).await?;
    Ok((StatusCode::CREATED, Json(state)))
}

async fn list(State(m): Manager) -> Json<Vec<String>> {
    Json(m.ids())
}

async fn state(State(m): Manager, Path(id): Path<String>) -> ApiResult<super::StateDocument> {
    Ok(Json(m.state(&id).await?))
}

async fn code(State(m): Manager, Path((id, eid)): Path<(String, String)>) -> Result<Response, ApiError> {
    let bytes = m.code(&id, &ElementId::new(eid)).await?;
    Ok(([(header::CONTENT_TYPE, "text/plain; charset=utf-8")], bytes).into_response())
}

async fn toggle(State(m): Manager, Path(id): Path<String>, bytes: Bytes) -> ApiResult<super::ToggleResult> {
    let req: ToggleRequest = body(&bytes)?;
    Ok(Json(m.toggle(&id, &req.element_id, req.enabled, req.revision).await?))
}

async fn apply(State(m): Manager, Path(id): Path<String>, bytes: Bytes) -> ApiResult<super::ApplyResult> {
    let req: ApplyRequest = body(&bytes)?;
    Ok(Json(m.apply(&id, req.revision).await?))
}

async fn save(State(m): Manager, Path(id): Path<String>, bytes: Bytes) -> ApiResult<super::SavedArtifacts> {
    let req: SaveRequest = body(&bytes)?;
    Ok(Json(m.save(&id, &req.out_dir).await?))
}

async fn report(State(m): Manager, Path(id): Path<String>) -> ApiResult<super::ReportDocument> {
    Ok(Json(m.report(&id).await?))
}

async fn not_found() -> ApiError {
    ApiError {
        code: "not_found".into(),
        message: "no such route".into(),
    }
}

/// The session API. With `ui_dir`, other paths serve static files from it.
pub fn router(manager: Arc<SessionManager>, ui_dir: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/sessions", post(create).get(list))
        .route("/sessions/{id}", get(state))
        .route("/sessions/{id}/elements/{eid}/code", get(code))
        .route("/sessions/{id}/toggle", post(toggle))
        .route("/sessions/{id}/apply", post(apply))
        .route("/sessions/{id}/save", post(save))
        .route("/sessions/{id}/report", get(report))
        .with_state(manager);
    match ui_dir {
        Some(dir) => api.fallback_service(tower_http::services::ServeDir::new(dir)),
        None => api.fallback(not_found),
    }
}
