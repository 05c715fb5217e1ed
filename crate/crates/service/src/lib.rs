//! Real-time session host: a WebSocket per live session plus a small HTTP
//! API over the recorded session files, group reports and expert clips.

pub mod live;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::extract::ws::{CloseFrame, Message, WebSocket, WebSocketUpgrade};
use axum::extract::{Path as UrlPath, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use thiserror::Error;
use vcoach_core::analytics::{group_series, report, AnalyticsError, Arm};
use vcoach_core::clips::{ClipError, ClipStore};
use vcoach_core::session::{SessionError, SESSION_EXTENSION};
use vcoach_core::{replay, CoachingMode, EngineOptions, Report, SessionLog, Side, TaskConfig, TaskMetrics};

pub use live::{ClientInput, LiveMetrics, LiveSession, ServerState};

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub data_dir: PathBuf,
    pub clips_dir: PathBuf,
    pub token: String,
    pub task: TaskConfig,
}

#[derive(Debug, Error)]
pub enum ApiError {
    #[error("not found: {0}")]
    NotFound(String),
    #[error("bad request: {0}")]
    BadRequest(String),
    #[error("unavailable: {0}")]
    Unavailable(String),
    #[error("session error: {0}")]
    Session(#[from] SessionError),
}

impl From<AnalyticsError> for ApiError {
    fn from(e: AnalyticsError) -> Self {
        ApiError::BadRequest(e.to_string())
    }
}

impl From<ClipError> for ApiError {
    fn from(e: ClipError) -> Self {
        match e {
            ClipError::OutOfRange { .. } | ClipError::Missing(_) => ApiError::NotFound(e.to_string()),
            other => ApiError::Unavailable(other.to_string()),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = match &self {
            ApiError::NotFound(_) => StatusCode::NOT_FOUND,
            ApiError::BadRequest(_) => StatusCode::BAD_REQUEST,
            ApiError::Unavailable(_) => StatusCode::SERVICE_UNAVAILABLE,
            ApiError::Session(SessionError::Io(e)) if e.kind() == std::io::ErrorKind::NotFound => {
                StatusCode::NOT_FOUND
            }
            ApiError::Session(_) => StatusCode::UNPROCESSABLE_ENTITY,
        };
        (status, Json(serde_json::json!({ "error": self.to_string() }))).into_response()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionSummary {
    pub id: String,
    pub participant: String,
    pub label: String,
    pub mode: CoachingMode,
    pub live: bool,
}

struct Inner {
    config: ServiceConfig,
    next_live: AtomicU64,
    live: Mutex<BTreeMap<String, SessionSummary>>,
}

#[derive(Clone)]
pub struct AppState(Arc<Inner>);

impl AppState {
    pub fn new(config: ServiceConfig) -> Self {
        AppState(Arc::new(Inner { config, next_live: AtomicU64::new(1), live: Mutex::new(BTreeMap::new()) }))
    }

    pub fn config(&self) -> &ServiceConfig {
        &self.0.config
    }

    fn session_path(&self, id: &str) -> Result<PathBuf, ApiError> {
        let ok = !id.is_empty() && id.chars().all(|c| c.is_ascii_alphanumeric() || "-_.".contains(c)) && !id.starts_with('.');
        if !ok {
            return Err(ApiError::NotFound(format!("session {id}")));
        }
        let path = self.0.config.data_dir.join(format!("{id}.{SESSION_EXTENSION}"));
        if !path.is_file() {
            return Err(ApiError::NotFound(format!("session {id}")));
        }
        Ok(path)
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/sessions", get(list_sessions))
        .route("/sessions/{id}", get(fetch_session))
        .route("/sessions/{id}/metrics", get(session_metrics))
        .route("/reports", post(group_report))
        .route("/clips/{segment}", get(fetch_clip))
        .route("/ws", get(live_socket))
        .with_state(state)
}

pub async fn serve(config: ServiceConfig, port: u16) -> std::io::Result<()> {
    std::fs::create_dir_all(&config.data_dir)?;
    let listener = tokio::net::TcpListener::bind(("0.0.0.0", port)).await?;
    tracing::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(AppState::new(config))).await
}

fn stored_sessions(dir: &Path) -> Vec<(String, PathBuf)> {
    let Ok(entries) = std::fs::read_dir(dir) else { return Vec::new() };
    let mut out: Vec<(String, PathBuf)> = entries
        .filter_map(Result::ok)
        .map(|e| e.path())
        .filter(|p| p.extension().is_some_and(|x| x == SESSION_EXTENSION))
        .filter_map(|p| Some((p.file_stem()?.to_str()?.to_string(), p)))
        .collect();
    out.sort();
    out
}

async fn list_sessions(State(state): State<AppState>) -> Json<Vec<SessionSummary>> {
    let mut out = Vec::new();
    for (id, path) in stored_sessions(&state.config().data_dir) {
        // Unreadable files are skipped rather than failing the listing.
        if let Ok((h, _)) = SessionLog::read_summary(&path) {
            out.push(SessionSummary { id, participant: h.participant, label: h.label, mode: h.mode, live: false });
        }
    }
    out.extend(state.0.live.lock().expect("registry lock").values().cloned());
    Json(out)
}

async fn fetch_session(State(state): State<AppState>, UrlPath(id): UrlPath<String>) -> Result<Response, ApiError> {
    let path = state.session_path(&id)?;
    let body = std::fs::read(path).map_err(SessionError::from)?;
    Ok(([(axum::http::header::CONTENT_TYPE, "application/x-ndjson")], body).into_response())
}

async fn session_metrics(
    State(state): State<AppState>,
    UrlPath(id): UrlPath<String>,
) -> Result<Json<TaskMetrics>, ApiError> {
    let log = SessionLog::load(&state.session_path(&id)?)?;
    Ok(Json(replay(&log)?.metrics))
}

/// Two manifests of session ids; arm A is the coached (experimental) arm.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReportRequest {
    pub arm_a: Vec<String>,
    pub arm_b: Vec<String>,
}

async fn group_report(State(state): State<AppState>, Json(req): Json<ReportRequest>) -> Result<Json<Report>, ApiError> {
    let load = |ids: &[String]| -> Result<Vec<(String, String, TaskMetrics)>, ApiError> {
        ids.iter()
            .map(|id| {
                let (h, f) = SessionLog::read_summary(&state.session_path(id)?)?;
                Ok((h.participant, h.label, f.metrics))
            })
            .collect()
    };
    let mut groups = group_series(Arm::Experimental, load(&req.arm_a)?)?;
    groups.extend(group_series(Arm::Control, load(&req.arm_b)?)?);
    Ok(Json(report(&groups)?))
}

async fn fetch_clip(
    State(state): State<AppState>,
    UrlPath(segment): UrlPath<usize>,
) -> Result<Json<vcoach_core::ExpertClip>, ApiError> {
    let store = ClipStore::open(&state.config().clips_dir)?;
    Ok(Json(store.expert_clip(segment)?))
}

#[derive(Debug, Clone, Deserialize)]
pub struct LiveParams {
    pub token: String,
    #[serde(default)]
    pub mode: Option<CoachingMode>,
    #[serde(default)]
    pub participant: Option<String>,
    #[serde(default)]
    pub label: Option<String>,
    #[serde(default)]
    pub handedness: Option<Side>,
}

async fn live_socket(State(state): State<AppState>, Query(params): Query<LiveParams>, ws: WebSocketUpgrade) -> Response {
    if params.token != state.config().token {
        return (StatusCode::UNAUTHORIZED, "bad token").into_response();
    }
    ws.on_upgrade(move |socket| run_live(state, params, socket))
}

fn clean_id(s: &str) -> String {
    s.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' { c } else { '-' }).collect()
}

async fn run_live(state: AppState, params: LiveParams, mut socket: WebSocket) {
    let n = state.0.next_live.fetch_add(1, Ordering::Relaxed);
    let participant = clean_id(params.participant.as_deref().unwrap_or("live"));
    let label = clean_id(params.label.as_deref().unwrap_or("session"));
    let id = format!("{participant}_{label}-{n}");
    let mode = params.mode.unwrap_or(CoachingMode::None);
    let options = EngineOptions { mode, handedness: params.handedness.unwrap_or(Side::Right), ..Default::default() };
    let config = state.config().task.clone();
    let mut live = match LiveSession::new(config.clone(), options, &participant, &label) {
        Ok(l) => l,
        Err(e) => {
            let _ = socket.send(close(1011, &e.to_string())).await;
            return;
        }
    };
    state.0.live.lock().expect("registry lock").insert(
        id.clone(),
        SessionSummary { id: id.clone(), participant, label, mode, live: true },
    );

    let mut interval = tokio::time::interval(Duration::from_secs_f64(1.0 / config.tick_rate));
    interval.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Delay);
    loop {
        tokio::select! {
            msg = socket.recv() => match msg {
                Some(Ok(Message::Text(text))) => match serde_json::from_str::<ClientInput>(&text) {
                    Ok(input) => {
                        if !live.submit(input) {
                            tracing::warn!("session {id}: input seq {} ignored", input.seq);
                        }
                    }
                    Err(e) => {
                        let _ = socket.send(close(1007, &format!("malformed input: {e}"))).await;
                        break;
                    }
                },
                Some(Ok(Message::Close(_))) | None | Some(Err(_)) => break,
                Some(Ok(_)) => {}
            },
            _ = interval.tick() => {
                let state_msg = match live.step() {
                    Ok(s) => s,
                    Err(e) => {
                        let _ = socket.send(close(1011, &e.to_string())).await;
                        break;
                    }
                };
                let text = serde_json::to_string(&state_msg).expect("state serializes");
                if socket.send(Message::Text(text.into())).await.is_err() {
                    break;
                }
                if live.is_complete() {
                    let _ = socket.send(close(1000, "task complete")).await;
                    break;
                }
            }
        }
    }
    state.0.live.lock().expect("registry lock").remove(&id);
    match live.finish() {
        Ok(Some(log)) => {
            let path = state.config().data_dir.join(format!("{id}.{SESSION_EXTENSION}"));
            if let Err(e) = log.save(&path) {
                tracing::error!("session {id}: could not save: {e}");
            }
        }
        Ok(None) => {}
        Err(e) => tracing::error!("session {id}: could not finalize: {e}"),
    }
}

fn close(code: u16, reason: &str) -> Message {
    Message::Close(Some(CloseFrame { code, reason: reason.to_string().into() }))
}
