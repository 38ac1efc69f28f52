//! JSON API consumed by the annotation UI.
//!
//! - `GET  /api/judges/{id}/next-task`
//! - `POST /api/ratings` with `{judge_id, ratings: [{dialogue_id, turn_index, rating}]}`
//! - `GET  /api/progress`
//! - `GET  /api/export` (CSV)

use std::sync::Arc;

use axum::extract::{Path, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};

use super::service::{Ack, AnnotationService, NextTask, Progress, RatingInput, ServiceError};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SubmitRequest {
    pub judge_id: String,
    pub ratings: Vec<RatingInput>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub retry: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub turn_index: Option<usize>,
}

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let (status, kind, retry, turn_index) = match &self {
            ServiceError::UnknownJudge(_) => (StatusCode::NOT_FOUND, "unknown_judge", None, None),
            ServiceError::UnknownDialogue(_) => (StatusCode::NOT_FOUND, "unknown_dialogue", None, None),
            ServiceError::InvalidRating { turn_index, .. } => {
                (StatusCode::UNPROCESSABLE_ENTITY, "invalid_rating", None, Some(*turn_index))
            }
            ServiceError::Coverage(_) => (StatusCode::UNPROCESSABLE_ENTITY, "coverage", None, None),
            ServiceError::Duplicate { .. } => (StatusCode::CONFLICT, "duplicate", None, None),
            ServiceError::LeaseExpired(_) => (
                StatusCode::GONE,
                "lease_expired",
                Some("request the next task and resubmit".to_string()),
                None,
            ),
            ServiceError::NoLease(_) => (StatusCode::CONFLICT, "no_lease", None, None),
            ServiceError::Storage(_) => (StatusCode::INTERNAL_SERVER_ERROR, "storage", None, None),
        };
        let body = ErrorBody {
            error: self.to_string(),
            kind: kind.to_string(),
            retry,
            turn_index,
        };
        (status, Json(body)).into_response()
    }
}

async fn next_task(
    State(svc): State<Arc<AnnotationService>>,
    Path(id): Path<String>,
) -> Result<Json<NextTask>, ServiceError> {
    svc.assign_task(&id).map(Json)
}

async fn submit(
    State(svc): State<Arc<AnnotationService>>,
    Json(req): Json<SubmitRequest>,
) -> Result<Json<Ack>, ServiceError> {
    svc.submit_ratings(&req.judge_id, &req.ratings).map(Json)
}

async fn progress(State(svc): State<Arc<AnnotationService>>) -> Json<Progress> {
    Json(svc.progress())
}

async fn export(State(svc): State<Arc<AnnotationService>>) -> Result<Response, ServiceError> {
    let csv = svc.export_csv()?;
    Ok(([(header::CONTENT_TYPE, "text/csv; charset=utf-8")], csv).into_response())
}

pub fn router(svc: Arc<AnnotationService>) -> Router {
    Router::new()
        .route("/api/judges/{id}/next-task", get(next_task))
        .route("/api/ratings", post(submit))
        .route("/api/progress", get(progress))
        .route("/api/export", get(export))
        .with_state(svc)
}

/// Serves until ctrl-c.
pub async fn serve(svc: Arc<AnnotationService>, addr: std::net::SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!(%addr, "annotation service listening");
    axum::serve(listener, router(svc))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
