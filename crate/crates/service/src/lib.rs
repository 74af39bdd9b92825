//! HTTP/JSON session API around the sequential engine.
//!
//! * `POST /sessions` — create a session, returns the first item.
//! * `POST /sessions/{id}/responses` — answer the pending item.
//! * `GET /sessions/{id}/report` — history, frequencies and estimate trace.
//! * `GET /healthz`
//!
//! Each session sits behind its own mutex, so requests to different sessions
//! run concurrently while those to one session are serialized.

mod session;

use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path as UrlPath, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};

pub use session::{
    build_engine, CreateSession, HistoryEntry, InferenceBody, ResponseAccepted, Session, SessionCreated, SessionReport, Status,
    StopBody, SubmitResponse,
};

/// JSON error body: a stable `code` plus a human-readable `message`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_eigenvalue: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expected_item: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ApiError {
    pub status: StatusCode,
    pub body: ErrorBody,
}

impl ApiError {
    fn new(status: StatusCode, code: &str, message: String) -> Self {
        ApiError {
            status,
            body: ErrorBody {
                code: code.into(),
                message,
                min_eigenvalue: None,
                expected_item: None,
            },
        }
    }

    pub fn bad_request(code: &str, message: String) -> Self {
        Self::new(StatusCode::BAD_REQUEST, code, message)
    }

    /// 400 carrying `code`, except that a singular initialization always
    /// reports `singular_initialization` with its smallest eigenvalue.
    pub fn from_core(code: &str, e: activest::Error) -> Self {
        match e {
            activest::Error::SingularInitialization { min_eigenvalue } => {
                let mut err = Self::bad_request("singular_initialization", e.to_string());
                err.body.min_eigenvalue = Some(min_eigenvalue);
                err
            }
            other => Self::bad_request(code, other.to_string()),
        }
    }

    pub fn not_found(id: &str) -> Self {
        Self::new(StatusCode::NOT_FOUND, "unknown_session", format!("no session `{id}`"))
    }

    pub fn item_mismatch(expected: usize, found: usize) -> Self {
        let mut err = Self::new(
            StatusCode::CONFLICT,
            "item_mismatch",
            format!("pending item is {expected}, response was for {found}"),
        );
        err.body.expected_item = Some(expected);
        err
    }

    pub fn gone() -> Self {
        Self::new(StatusCode::GONE, "session_stopped", "the session has stopped".into())
    }

    pub fn internal(message: String) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

impl From<JsonRejection> for ApiError {
    fn from(rej: JsonRejection) -> Self {
        ApiError::bad_request("invalid_json", rej.body_text())
    }
}

/// Sessions persisted as their creation request plus responses; restoring
/// replays them, so the engine state is rebuilt exactly.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub sessions: Vec<SessionSnapshot>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionSnapshot {
    pub id: String,
    pub request: CreateSession,
    pub responses: Vec<HistoryEntry>,
}

#[derive(Clone, Default)]
pub struct AppState {
    sessions: Arc<RwLock<HashMap<String, Arc<Mutex<Session>>>>>,
}

impl AppState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.sessions.read().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn get(&self, id: &str) -> Result<Arc<Mutex<Session>>, ApiError> {
        self.sessions.read().get(id).cloned().ok_or_else(|| ApiError::not_found(id))
    }

    pub fn create(&self, request: CreateSession) -> Result<SessionCreated, ApiError> {
        let id = uuid::Uuid::new_v4().simple().to_string();
        self.insert(id, request)
    }

    fn insert(&self, id: String, request: CreateSession) -> Result<SessionCreated, ApiError> {
        let session = Session::create(id.clone(), request)?;
        let created = SessionCreated {
            session_id: id.clone(),
            first_item: session.pending().expect("a fresh session has an initialization item"),
            n0: session.request().initial_experiments.len(),
        };
        self.sessions.write().insert(id, Arc::new(Mutex::new(session)));
        Ok(created)
    }

    pub fn submit(&self, id: &str, response: SubmitResponse) -> Result<ResponseAccepted, ApiError> {
        self.get(id)?.lock().submit(response)
    }

    pub fn report(&self, id: &str) -> Result<SessionReport, ApiError> {
        self.get(id)?.lock().report()
    }

    pub fn snapshot(&self) -> Snapshot {
        let mut sessions: Vec<SessionSnapshot> = self
            .sessions
            .read()
            .values()
            .map(|s| {
                let s = s.lock();
                SessionSnapshot {
                    id: s.id().to_string(),
                    request: s.request().clone(),
                    responses: s.history(),
                }
            })
            .collect();
        sessions.sort_by(|a, b| a.id.cmp(&b.id));
        Snapshot { sessions }
    }

    pub fn restore(snapshot: &Snapshot) -> Result<Self, ApiError> {
        let state = AppState::new();
        for s in &snapshot.sessions {
            state.insert(s.id.clone(), s.request.clone())?;
            for r in &s.responses {
                state.submit(&s.id, SubmitResponse { item_id: r.item, value: r.value })?;
            }
        }
        Ok(state)
    }
}

async fn healthz() -> &'static str {
    "ok"
}

async fn create_session(
    State(state): State<AppState>,
    body: Result<Json<CreateSession>, JsonRejection>,
) -> Result<(StatusCode, Json<SessionCreated>), ApiError> {
    let Json(request) = body?;
    Ok((StatusCode::CREATED, Json(state.create(request)?)))
}

async fn submit_response(
    State(state): State<AppState>,
    UrlPath(id): UrlPath<String>,
    body: Result<Json<SubmitResponse>, JsonRejection>,
) -> Result<Json<ResponseAccepted>, ApiError> {
    let Json(response) = body?;
    Ok(Json(state.submit(&id, response)?))
}

async fn session_report(State(state): State<AppState>, UrlPath(id): UrlPath<String>) -> Result<Json<SessionReport>, ApiError> {
    Ok(Json(state.report(&id)?))
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/healthz", get(healthz))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}/responses", post(submit_response))
        .route("/sessions/{id}/report", get(session_report))
        .with_state(state)
}

#[derive(Debug, thiserror::Error)]
pub enum ServeError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("snapshot {path}: {message}")]
    Snapshot { path: PathBuf, message: String },
}

pub fn read_snapshot(path: &Path) -> Result<Snapshot, ServeError> {
    let bad = |message: String| ServeError::Snapshot { path: path.to_path_buf(), message };
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| bad(e.to_string()))
}

pub fn write_snapshot(path: &Path, snapshot: &Snapshot) -> Result<(), ServeError> {
    let text = serde_json::to_string_pretty(snapshot).expect("snapshot serializes");
    std::fs::write(path, text)?;
    Ok(())
}

/// Serves until Ctrl-C. With `snapshot`, sessions are restored from the file
/// when it exists and written back on shutdown.
pub async fn serve(addr: SocketAddr, snapshot: Option<PathBuf>) -> Result<(), ServeError> {
    let state = match &snapshot {
        Some(path) if path.exists() => AppState::restore(&read_snapshot(path)?).map_err(|e| ServeError::Snapshot {
            path: path.clone(),
            message: e.body.message,
        })?,
        _ => AppState::new(),
    };
    let listener = tokio::net::TcpListener::bind(addr).await?;
    axum::serve(listener, router(state.clone()))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    if let Some(path) = &snapshot {
        write_snapshot(path, &state.snapshot())?;
    }
    Ok(())
}
