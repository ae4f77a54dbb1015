//! HTTP/JSON front of [`Service`]. Fitting is CPU-bound, so every call into
//! the service runs on the blocking pool.

use std::collections::HashMap;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Serialize;

use crate::service::{Service, ServiceError};

#[derive(Debug, Serialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
}

pub struct ApiError(ServiceError);

impl From<ServiceError> for ApiError {
    fn from(e: ServiceError) -> Self {
        Self(e)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = match &self.0 {
            ServiceError::NotFound(_) => StatusCode::NOT_FOUND,
            ServiceError::BadRequest(_) => StatusCode::BAD_REQUEST,
            ServiceError::Replay(_) | ServiceError::Io(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        let body = ErrorBody { code: self.0.code().into(), message: self.0.to_string() };
        (status, Json(body)).into_response()
    }
}

async fn blocking<T: Send + 'static>(
    f: impl FnOnce() -> Result<T, ServiceError> + Send + 'static,
) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError(ServiceError::Io(std::io::Error::other(e))))?
        .map_err(ApiError)
}

async fn ingest(
    State(svc): State<Arc<Service>>,
    Path((child, session)): Path<(String, String)>,
    body: Bytes,
) -> Result<impl IntoResponse, ApiError> {
    let ack = blocking(move || svc.ingest(&child, &session, &body)).await?;
    Ok(Json(ack))
}

async fn report(State(svc): State<Arc<Service>>, Path(child): Path<String>) -> Result<impl IntoResponse, ApiError> {
    Ok(Json(blocking(move || svc.report(&child)).await?))
}

async fn alerts(
    State(svc): State<Arc<Service>>,
    Path(child): Path<String>,
    Query(q): Query<HashMap<String, String>>,
) -> Result<impl IntoResponse, ApiError> {
    let since = match q.get("since") {
        None => 0,
        Some(s) => s
            .parse::<i64>()
            .map_err(|_| ApiError(ServiceError::BadRequest(format!("since must be integer milliseconds, got {s:?}"))))?,
    };
    Ok(Json(blocking(move || svc.alerts(&child, since)).await?))
}

async fn healthz() -> impl IntoResponse {
    Json(serde_json::json!({ "v": 1, "status": "ok" }))
}

async fn not_found() -> ApiError {
    ApiError(ServiceError::NotFound("no such endpoint".into()))
}

pub fn router(svc: Arc<Service>) -> Router {
    Router::new()
        .route("/v1/children/{id}/sessions/{sid}/trials", post(ingest))
        .route("/v1/children/{id}/report", get(report))
        .route("/v1/children/{id}/alerts", get(alerts))
        .route("/v1/healthz", get(healthz))
        .fallback(not_found)
        .with_state(svc)
}
