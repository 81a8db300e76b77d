//! HTTP API over a running session.

use std::sync::Arc;

use axum::extract::{Path, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use ptylab_core::evolution::lineage;
use serde::Deserialize;
use serde_json::json;

use crate::human::ResolveError;
use crate::session::SessionShared;

#[derive(Debug, Deserialize)]
pub struct EvaluationBody {
    pub score: f64,
    #[serde(default)]
    pub feedback: Option<String>,
    #[serde(default)]
    pub suggestions: Option<String>,
}

fn error(status: StatusCode, message: impl Into<String>) -> Response {
    (status, Json(json!({ "error": message.into() }))).into_response()
}

fn resolve_status(e: &ResolveError) -> StatusCode {
    match e {
        ResolveError::NotFound(_) => StatusCode::NOT_FOUND,
        ResolveError::AlreadyResolved(_) => StatusCode::CONFLICT,
        ResolveError::ScoreOutOfRange(_) => StatusCode::UNPROCESSABLE_ENTITY,
    }
}

async fn session(State(s): State<Arc<SessionShared>>) -> Response {
    Json(s.read()).into_response()
}

async fn pending(State(s): State<Arc<SessionShared>>) -> Response {
    Json(s.queue.pending()).into_response()
}

async fn image(State(s): State<Arc<SessionShared>>, Path((ticket, file)): Path<(String, String)>) -> Response {
    let Some(layer) = file.strip_suffix(".png").and_then(|n| n.parse::<usize>().ok()) else {
        return error(StatusCode::NOT_FOUND, format!("no image {file}"));
    };
    match s.queue.image(&ticket, layer) {
        Ok(bytes) => ([(header::CONTENT_TYPE, "image/png")], bytes).into_response(),
        Err(e) => error(resolve_status(&e), e.to_string()),
    }
}

async fn evaluate(
    State(s): State<Arc<SessionShared>>,
    Path(ticket): Path<String>,
    body: Result<Json<EvaluationBody>, axum::extract::rejection::JsonRejection>,
) -> Response {
    let Json(body) = match body {
        Ok(b) => b,
        Err(e) => return error(StatusCode::UNPROCESSABLE_ENTITY, e.body_text()),
    };
    match s.queue.resolve(&ticket, body.score, body.feedback, body.suggestions, &s.tiers) {
        Ok(result) => Json(result).into_response(),
        Err(e) => error(resolve_status(&e), e.to_string()),
    }
}

async fn history(State(s): State<Arc<SessionShared>>) -> Response {
    Json(s.read().history).into_response()
}

async fn lineage_of(State(s): State<Arc<SessionShared>>, Path(id): Path<String>) -> Response {
    match lineage(&s.read().archive, &id) {
        Ok(tree) => Json(tree).into_response(),
        Err(e) => error(StatusCode::NOT_FOUND, e.to_string()),
    }
}

pub fn router(shared: Arc<SessionShared>) -> Router {
    Router::new()
        .route("/api/session", get(session))
        .route("/api/pending", get(pending))
        .route("/api/images/{ticket}/{file}", get(image))
        .route("/api/evaluations/{ticket}", post(evaluate))
        .route("/api/history", get(history))
        .route("/api/lineage/{id}", get(lineage_of))
        .with_state(shared)
}

/// Serves until `shared.stop` is raised.
pub async fn serve(listener: tokio::net::TcpListener, shared: Arc<SessionShared>) -> std::io::Result<()> {
    let stop = shared.stop.clone();
    axum::serve(listener, router(shared))
        .with_graceful_shutdown(async move {
            while !stop.load(std::sync::atomic::Ordering::SeqCst) {
                tokio::time::sleep(std::time::Duration::from_millis(100)).await;
            }
        })
        .await
}
