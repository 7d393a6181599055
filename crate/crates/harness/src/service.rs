//! HTTP annotation service.
//!
//! Mutations are serialized through one lock around the session and run on
//! the blocking pool, since closing a round trains an ensemble. Status reads
//! come from a snapshot behind its own lock, so they answer while training
//! is under way.

use std::sync::{Arc, RwLock};

use axum::extract::rejection::JsonRejection;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use tokio::sync::Mutex;

use crate::session::{AnnotationSession, SessionError, Status, Submission};

#[derive(Clone)]
pub struct AppState {
    session: Arc<Mutex<AnnotationSession>>,
    status: Arc<RwLock<Status>>,
}

impl AppState {
    pub fn new(session: AnnotationSession) -> Self {
        let status = session.status();
        AppState {
            session: Arc::new(Mutex::new(session)),
            status: Arc::new(RwLock::new(status)),
        }
    }

    pub fn status(&self) -> Status {
        self.status.read().expect("status lock").clone()
    }

    /// Runs `f` on the session off the async runtime and refreshes the
    /// status snapshot afterwards.
    async fn mutate<T, F>(&self, f: F) -> Result<T, ApiError>
    where
        T: Send + 'static,
        F: FnOnce(&mut AnnotationSession, &dyn Fn(bool)) -> Result<T, SessionError> + Send + 'static,
    {
        let mut guard = self.session.clone().lock_owned().await;
        let status = self.status.clone();
        tokio::task::spawn_blocking(move || {
            let mark = |training: bool| status.write().expect("status lock").training = training;
            let out = f(&mut guard, &mark);
            *status.write().expect("status lock") = guard.status();
            out
        })
        .await
        .map_err(|e| ApiError(SessionError::Internal(e.into())))?
        .map_err(ApiError)
    }

    /// Runs `f` with shared access to the session.
    pub async fn with_session<T>(&self, f: impl FnOnce(&AnnotationSession) -> T) -> T {
        f(&*self.session.lock().await)
    }
}

pub struct ApiError(SessionError);

#[derive(Serialize)]
struct ErrorBody {
    error: String,
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let code = match &self.0 {
            SessionError::Conflict(_) => StatusCode::CONFLICT,
            SessionError::Malformed(_) => StatusCode::BAD_REQUEST,
            SessionError::Internal(e) => {
                log::error!("{e:#}");
                StatusCode::INTERNAL_SERVER_ERROR
            }
        };
        let error = match &self.0 {
            SessionError::Internal(e) => format!("{e:#}"),
            other => other.to_string(),
        };
        (code, Json(ErrorBody { error })).into_response()
    }
}

#[derive(Deserialize)]
pub struct LabelRequest {
    pub sentence_id: String,
    pub labels: Vec<String>,
}

#[derive(Serialize)]
struct LabelResponse {
    accepted: bool,
    round: usize,
}

#[derive(Serialize)]
struct RoundResponse {
    round: usize,
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/session/status", get(status))
        .route("/session/next", get(next))
        .route("/session/label", post(label))
        .route("/session/retrain", post(retrain))
        .with_state(state)
}

async fn status(State(state): State<AppState>) -> Json<Status> {
    Json(state.status())
}

/// 204 when nothing is outstanding, which means the run is finished.
async fn next(State(state): State<AppState>) -> Response {
    match state.with_session(|s| s.next()).await {
        Some(q) => Json(q).into_response(),
        None => StatusCode::NO_CONTENT.into_response(),
    }
}

async fn label(
    State(state): State<AppState>,
    body: Result<Json<LabelRequest>, JsonRejection>,
) -> Result<Response, ApiError> {
    let Json(req) = body.map_err(|e| ApiError(SessionError::Malformed(e.body_text())))?;
    let round = state
        .mutate(move |s, mark| {
            let outcome = s.submit(&req.sentence_id, &req.labels)?;
            if outcome == Submission::Accepted && s.learner().needs_training() {
                mark(true);
                s.advance()?;
            }
            Ok(s.learner().round())
        })
        .await?;
    Ok(Json(LabelResponse { accepted: true, round }).into_response())
}

async fn retrain(State(state): State<AppState>) -> Result<Json<RoundResponse>, ApiError> {
    let round = state
        .mutate(|s, mark| {
            mark(true);
            Ok(s.retrain()?)
        })
        .await?;
    Ok(Json(RoundResponse { round }))
}

/// Serves until ctrl-c.
pub async fn serve(listener: tokio::net::TcpListener, state: AppState) -> std::io::Result<()> {
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
