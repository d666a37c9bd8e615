//! JSON-over-HTTP routes.

use std::sync::Arc;

use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use panobox_core::model::BBox;
use serde::Deserialize;
use serde_json::json;

use crate::protocol::EditEvent;
use crate::service::{Service, ServiceError};

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let status = match &self {
            ServiceError::NotFound(_) | ServiceError::NoWork => StatusCode::NOT_FOUND,
            ServiceError::Protocol(_) | ServiceError::Incomplete | ServiceError::Finalized => StatusCode::CONFLICT,
            ServiceError::NotQualified(_) => StatusCode::FORBIDDEN,
            ServiceError::Store(_) | ServiceError::Setup(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        (status, Json(json!({ "error": self.to_string() }))).into_response()
    }
}

type ApiResult<T> = Result<Json<T>, ServiceError>;

#[derive(Deserialize)]
struct WorkerQuery {
    worker: String,
}

#[derive(Deserialize)]
struct ImageQuery {
    session: Option<String>,
}

#[derive(Deserialize)]
struct QualificationBody {
    worker: String,
    boxes: Vec<BBox>,
}

pub fn router(svc: Arc<Service>) -> Router {
    Router::new()
        .route("/batches/next", get(next_batch))
        .route("/images/{id}", get(image))
        .route("/sessions/{id}/next", get(next_item))
        .route("/sessions/{id}/events", post(events))
        .route("/sessions/{id}/finalize", post(finalize))
        .route("/reports/crowdsourcing", get(report))
        .route("/qualification", post(qualification))
        .with_state(svc)
}

async fn next_batch(State(s): State<Arc<Service>>, Query(q): Query<WorkerQuery>) -> ApiResult<impl serde::Serialize> {
    s.next_batch(&q.worker).map(Json)
}

async fn image(
    State(s): State<Arc<Service>>,
    Path(id): Path<String>,
    Query(q): Query<ImageQuery>,
) -> ApiResult<impl serde::Serialize> {
    s.image(&id, q.session.as_deref()).map(Json)
}

async fn next_item(State(s): State<Arc<Service>>, Path(id): Path<String>) -> ApiResult<impl serde::Serialize> {
    s.next_item(&id).map(Json)
}

async fn events(
    State(s): State<Arc<Service>>,
    Path(id): Path<String>,
    Json(body): Json<Vec<EditEvent>>,
) -> ApiResult<impl serde::Serialize> {
    s.post_events(&id, &body).map(Json)
}

async fn finalize(State(s): State<Arc<Service>>, Path(id): Path<String>) -> ApiResult<impl serde::Serialize> {
    s.finalize(&id).map(Json)
}

async fn report(State(s): State<Arc<Service>>) -> Json<impl serde::Serialize> {
    Json(s.report())
}

async fn qualification(
    State(s): State<Arc<Service>>,
    Json(body): Json<QualificationBody>,
) -> ApiResult<impl serde::Serialize> {
    s.qualify(&body.worker, body.boxes).map(Json)
}

/// Serves the API until the process is stopped.
pub async fn serve(svc: Arc<Service>, bind: &str) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(bind).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(svc)).await
}
