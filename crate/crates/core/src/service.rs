//! HTTP+JSON API over stories, sessions, annotations and exports.
//!
//! Every request loads the entity from the [`Store`], mutates it and writes
//! it back, so the process holds no session state between requests. A
//! per-session guard rejects a second concurrent mutation with 409 rather
//! than queueing it.
//!
//! | Route | Purpose |
//! |---|---|
//! | `GET/POST /stories`, `GET/PUT/DELETE /stories/{id}` | story CRUD |
//! | `POST /validate` | validate a story document without storing it |
//! | `GET/POST /sessions`, `GET /sessions/{id}` | session lifecycle |
//! | `POST /sessions/{id}/step` | generate the next line |
//! | `POST /sessions/{id}/player-line` | submit the player's line |
//! | `POST /sessions/{id}/pause`, `/resume` | run control |
//! | `GET/POST /sessions/{id}/snapshots`, `POST /sessions/{id}/reset` | rewind |
//! | `GET/POST /sessions/{id}/annotations` | author annotations |
//! | `GET /sessions/{id}/export`, `/export.txt` | transcript export |
//!
//! Errors use the envelope `{"code", "message", "detail"}`.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tokio::sync::OwnedMutexGuard;

use crate::backend::CompletionBackend;
use crate::drama::FiringEvent;
use crate::engine::{EngineConfig, EngineError, Mode, Session, SessionState, StepOutcome};
use crate::export::{
    check_annotation, Annotation, AnnotationError, AnnotationKind, AnnotationTarget,
    TranscriptExport,
};
use crate::store::{Store, StoreError, StoredSession, StoredStory};
use crate::story::{
    parse_story_value, validate_story, ScriptLine, StoryDefinition, StoryError, Warning,
};

pub const ENV_DATA_DIR: &str = "DL_DATA_DIR";
pub const ENV_BIND_ADDR: &str = "DL_BIND_ADDR";
pub const DEFAULT_BIND_ADDR: &str = "127.0.0.1:8080";
pub const DEFAULT_DATA_DIR: &str = "data";

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub data_dir: PathBuf,
    pub bind_addr: SocketAddr,
}

impl ServiceConfig {
    pub fn from_env() -> anyhow::Result<Self> {
        let data_dir = std::env::var(ENV_DATA_DIR).unwrap_or_else(|_| DEFAULT_DATA_DIR.into());
        let bind = std::env::var(ENV_BIND_ADDR).unwrap_or_else(|_| DEFAULT_BIND_ADDR.into());
        Ok(ServiceConfig {
            data_dir: data_dir.into(),
            bind_addr: bind.parse()?,
        })
    }
}

#[derive(Clone)]
pub struct AppState {
    inner: Arc<Inner>,
}

struct Inner {
    store: Store,
    backend: Arc<dyn CompletionBackend>,
    engine: EngineConfig,
    guards: Mutex<HashMap<String, Arc<tokio::sync::Mutex<()>>>>,
}

impl AppState {
    pub fn new(store: Store, backend: Arc<dyn CompletionBackend>, engine: EngineConfig) -> Self {
        AppState {
            inner: Arc::new(Inner {
                store,
                backend,
                engine,
                guards: Mutex::new(HashMap::new()),
            }),
        }
    }

    pub fn store(&self) -> &Store {
        &self.inner.store
    }

    fn guard(&self, session_id: &str) -> Result<OwnedMutexGuard<()>, ApiError> {
        let lock = self
            .inner
            .guards
            .lock()
            .unwrap()
            .entry(session_id.to_string())
            .or_default()
            .clone();
        lock.try_lock_owned().map_err(|_| {
            ApiError::new(
                StatusCode::CONFLICT,
                "session_busy",
                "another request is already mutating this session",
            )
        })
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/stories", get(list_stories).post(create_story))
        .route(
            "/stories/{id}",
            get(get_story).put(update_story).delete(delete_story),
        )
        .route("/validate", post(validate))
        .route("/sessions", get(list_sessions).post(create_session))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/step", post(step))
        .route("/sessions/{id}/player-line", post(player_line))
        .route("/sessions/{id}/pause", post(pause))
        .route("/sessions/{id}/resume", post(resume))
        .route(
            "/sessions/{id}/snapshots",
            get(list_snapshots).post(take_snapshot),
        )
        .route("/sessions/{id}/reset", post(reset))
        .route(
            "/sessions/{id}/annotations",
            get(list_annotations).post(annotate),
        )
        .route("/sessions/{id}/export", get(export_json))
        .route("/sessions/{id}/export.txt", get(export_txt))
        .with_state(state)
}

pub async fn serve(config: ServiceConfig, state: AppState) -> anyhow::Result<()> {
    let listener = tokio::net::TcpListener::bind(config.bind_addr).await?;
    axum::serve(listener, router(state)).await?;
    Ok(())
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
    detail: Value,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        ApiError {
            status,
            code,
            message: message.into(),
            detail: Value::Null,
        }
    }

    fn with_detail(mut self, detail: Value) -> Self {
        self.detail = detail;
        self
    }

    fn bad_request(message: impl Into<String>) -> Self {
        ApiError::new(StatusCode::BAD_REQUEST, "validation", message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = json!({"code": self.code, "message": self.message, "detail": self.detail});
        (self.status, Json(body)).into_response()
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        match &e {
            StoreError::NotFound { .. } | StoreError::InvalidId(_) => {
                ApiError::new(StatusCode::NOT_FOUND, "not_found", e.to_string())
            }
            StoreError::Corrupt { quarantined, .. } => {
                ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "corrupt", e.to_string())
                    .with_detail(json!({"quarantined": quarantined}))
            }
            StoreError::Io { .. } => {
                ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "io", e.to_string())
            }
        }
    }
}

impl From<StoryError> for ApiError {
    fn from(e: StoryError) -> Self {
        let detail = match &e {
            StoryError::Schema { path, .. } | StoryError::InvalidCharacterName { path, .. } => {
                json!({"path": path})
            }
            _ => Value::Null,
        };
        ApiError::bad_request(e.to_string()).with_detail(detail)
    }
}

impl From<AnnotationError> for ApiError {
    fn from(e: AnnotationError) -> Self {
        match e {
            AnnotationError::Duplicate { .. } => {
                ApiError::new(StatusCode::CONFLICT, "duplicate", e.to_string())
            }
            _ => ApiError::bad_request(e.to_string()),
        }
    }
}

fn engine_error(e: EngineError, session: &Session, events_before: usize) -> ApiError {
    if e.is_state_conflict() {
        ApiError::new(StatusCode::CONFLICT, "wrong_state", e.to_string())
            .with_detail(json!({"state": session.state()}))
    } else if e.is_backend_failure() {
        ApiError::new(StatusCode::BAD_GATEWAY, "backend", e.to_string()).with_detail(json!({
            "state": session.state(),
            "events": &session.events()[events_before.min(session.events().len())..],
        }))
    } else {
        ApiError::bad_request(e.to_string())
    }
}

fn parse_body<T: DeserializeOwned>(body: &Bytes) -> Result<T, ApiError> {
    let body: &[u8] = if body.iter().all(u8::is_ascii_whitespace) {
        b"{}"
    } else {
        body
    };
    serde_json::from_slice(body)
        .map_err(|e| ApiError::bad_request(format!("invalid JSON body: {e}")))
}

async fn blocking<T, F>(f: F) -> Result<T, ApiError>
where
    F: FnOnce() -> Result<T, ApiError> + Send + 'static,
    T: Send + 'static,
{
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))?
}

#[derive(Serialize)]
struct WarningView {
    #[serde(flatten)]
    warning: Warning,
    message: String,
}

fn warning_views(def: &StoryDefinition) -> Vec<WarningView> {
    validate_story(def)
        .into_iter()
        .map(|w| WarningView {
            message: w.to_string(),
            warning: w,
        })
        .collect()
}

#[derive(Serialize)]
struct StoryView {
    id: String,
    story: StoryDefinition,
    warnings: Vec<WarningView>,
}

impl From<StoredStory> for StoryView {
    fn from(s: StoredStory) -> Self {
        StoryView {
            warnings: warning_views(&s.story),
            id: s.id,
            story: s.story,
        }
    }
}

fn new_id() -> String {
    uuid::Uuid::new_v4().simple().to_string()
}

async fn list_stories(State(app): State<AppState>) -> Result<Json<Value>, ApiError> {
    blocking(move || {
        let stories: Vec<Value> = app
            .store()
            .list_stories()?
            .into_iter()
            .map(|s| json!({"id": s.id, "title": s.story.title}))
            .collect();
        Ok(Json(json!({ "stories": stories })))
    })
    .await
}

async fn create_story(
    State(app): State<AppState>,
    body: Bytes,
) -> Result<(StatusCode, Json<StoryView>), ApiError> {
    let story = parse_story_value(parse_body(&body)?)?;
    blocking(move || {
        let stored = StoredStory {
            id: new_id(),
            story,
        };
        app.store().save_story(&stored)?;
        Ok((StatusCode::CREATED, Json(StoryView::from(stored))))
    })
    .await
}

async fn get_story(
    State(app): State<AppState>,
    Path(id): Path<String>,
) -> Result<Json<StoryView>, ApiError> {
    blocking(move || Ok(Json(StoryView::from(app.store().load_story(&id)?)))).await
}

async fn update_story(
    State(app): State<AppState>,
    Path(id): Path<String>,
    body: Bytes,
) -> Result<Json<StoryView>, ApiError> {
    let story = parse_story_value(parse_body(&body)?)?;
    blocking(move || {
        app.store().load_story(&id)?;
        let stored = StoredStory { id, story };
        app.store().save_story(&stored)?;
        Ok(Json(StoryView::from(stored)))
    })
    .await
}

async fn delete_story(
    State(app): State<AppState>,
    Path(id): Path<String>,
) -> Result<StatusCode, ApiError> {
    blocking(move || {
        app.store().delete_story(&id)?;
        Ok(StatusCode::NO_CONTENT)
    })
    .await
}

async fn validate(body: Bytes) -> Result<Json<Value>, ApiError> {
    let value: Value = parse_body(&body)?;
    Ok(Json(match parse_story_value(value) {
        Ok(def) => json!({"valid": true, "errors": [], "warnings": warning_views(&def)}),
        Err(e) => json!({"valid": false, "errors": [e.to_string()], "warnings": []}),
    }))
}

#[derive(Serialize)]
struct SessionView {
    id: String,
    story_id: Option<String>,
    title: String,
    mode: Mode,
    state: SessionState,
    awaiting_player: bool,
    turn: u64,
    player_character: Option<String>,
    lines: Vec<ScriptLine>,
    firings: Vec<FiringEvent>,
    snapshots: Vec<usize>,
}

impl From<&StoredSession> for SessionView {
    fn from(s: &StoredSession) -> Self {
        let session = &s.session;
        SessionView {
            id: session.id.clone(),
            story_id: s.story_id.clone(),
            title: session.definition.title.clone(),
            mode: session.mode,
            state: session.state().clone(),
            awaiting_player: *session.state() == SessionState::AwaitingPlayer,
            turn: session.turn(),
            player_character: session.definition.player_character.clone(),
            lines: session.lines().to_vec(),
            firings: session.firings().to_vec(),
            snapshots: s.snapshots.iter().map(|snap| snap.line_count).collect(),
        }
    }
}

#[derive(Deserialize)]
struct CreateSession {
    story_id: String,
    #[serde(default = "default_mode")]
    mode: Mode,
}

fn default_mode() -> Mode {
    Mode::Interactive
}

async fn list_sessions(State(app): State<AppState>) -> Result<Json<Value>, ApiError> {
    blocking(move || {
        let store = app.store();
        let sessions: Vec<Value> = store
            .session_ids()?
            .iter()
            .filter_map(|id| store.load_session(id).ok())
            .map(|s| {
                json!({
                    "id": s.session.id,
                    "story_id": s.story_id,
                    "title": s.session.definition.title,
                    "state": s.session.state(),
                    "turn": s.session.turn(),
                })
            })
            .collect();
        Ok(Json(json!({ "sessions": sessions })))
    })
    .await
}

async fn create_session(
    State(app): State<AppState>,
    body: Bytes,
) -> Result<(StatusCode, Json<SessionView>), ApiError> {
    let req: CreateSession = parse_body(&body)?;
    blocking(move || {
        let story = app.store().load_story(&req.story_id)?;
        let session =
            Session::with_config(new_id(), story.story, req.mode, app.inner.engine.clone());
        let stored = StoredSession::new(Some(story.id), session);
        app.store().save_session(&stored)?;
        Ok((StatusCode::CREATED, Json(SessionView::from(&stored))))
    })
    .await
}

async fn get_session(
    State(app): State<AppState>,
    Path(id): Path<String>,
) -> Result<Json<SessionView>, ApiError> {
    blocking(move || Ok(Json(SessionView::from(&app.store().load_session(&id)?)))).await
}

#[derive(Serialize)]
struct StepResponse {
    outcome: StepOutcome,
    state: SessionState,
    turn: u64,
    /// Index of the first entry in `lines`.
    from_index: usize,
    lines: Vec<ScriptLine>,
}

#[derive(Deserialize, Default)]
struct StepRequest {
    /// Client's last seen line count; lines from here on are returned.
    since: Option<usize>,
}

#[derive(Deserialize)]
struct PlayerLineRequest {
    text: String,
    since: Option<usize>,
}

/// Loads a session under its guard, applies `f`, persists, and returns the
/// lines the client has not yet seen.
async fn mutate_and_step<F>(
    app: AppState,
    id: String,
    since: Option<usize>,
    f: F,
) -> Result<Json<StepResponse>, ApiError>
where
    F: FnOnce(&mut Session, &dyn CompletionBackend) -> Result<StepOutcome, EngineError>
        + Send
        + 'static,
{
    let guard = app.guard(&id)?;
    blocking(move || {
        let _guard = guard;
        let mut stored = app.store().load_session(&id)?;
        let before_lines = stored.session.lines().len();
        let before_events = stored.session.events().len();
        let result = f(&mut stored.session, app.inner.backend.as_ref());
        if stored.session.lines().len() != before_lines {
            stored.record_snapshot();
        }
        app.store().save_session(&stored)?;
        let outcome = result.map_err(|e| engine_error(e, &stored.session, before_events))?;
        let from_index = since
            .unwrap_or(before_lines)
            .min(stored.session.lines().len());
        Ok(Json(StepResponse {
            outcome,
            state: stored.session.state().clone(),
            turn: stored.session.turn(),
            from_index,
            lines: stored.session.lines()[from_index..].to_vec(),
        }))
    })
    .await
}

async fn step(
    State(app): State<AppState>,
    Path(id): Path<String>,
    body: Bytes,
) -> Result<Json<StepResponse>, ApiError> {
    let req: StepRequest = parse_body(&body)?;
    mutate_and_step(app, id, req.since, |session, backend| session.step(backend)).await
}

async fn player_line(
    State(app): State<AppState>,
    Path(id): Path<String>,
    body: Bytes,
) -> Result<Json<StepResponse>, ApiError> {
    let req: PlayerLineRequest = parse_body(&body)?;
    mutate_and_step(app, id, req.since, move |session, backend| {
        session.submit_player_line(&req.text, backend)
    })
    .await
}

async fn control(
    app: AppState,
    id: String,
    f: fn(&mut StoredSession) -> Result<(), ApiError>,
) -> Result<Json<SessionView>, ApiError> {
    let guard = app.guard(&id)?;
    blocking(move || {
        let _guard = guard;
        let mut stored = app.store().load_session(&id)?;
        f(&mut stored)?;
        app.store().save_session(&stored)?;
        Ok(Json(SessionView::from(&stored)))
    })
    .await
}

fn state_conflict(stored: &StoredSession, e: EngineError) -> ApiError {
    engine_error(e, &stored.session, stored.session.events().len())
}

async fn pause(
    State(app): State<AppState>,
    Path(id): Path<String>,
) -> Result<Json<SessionView>, ApiError> {
    control(app, id, |s| {
        s.session.pause().map_err(|e| state_conflict(s, e))
    })
    .await
}

async fn resume(
    State(app): State<AppState>,
    Path(id): Path<String>,
) -> Result<Json<SessionView>, ApiError> {
    control(app, id, |s| {
        s.session.resume().map_err(|e| state_conflict(s, e))
    })
    .await
}

#[derive(Serialize)]
struct SnapshotView {
    line_count: usize,
    turn: u64,
    state: SessionState,
}

async fn list_snapshots(
    State(app): State<AppState>,
    Path(id): Path<String>,
) -> Result<Json<Value>, ApiError> {
    blocking(move || {
        let stored = app.store().load_session(&id)?;
        let snaps: Vec<SnapshotView> = stored
            .snapshots
            .iter()
            .map(|s| SnapshotView {
                line_count: s.line_count,
                turn: s.progress.turn,
                state: s.progress.state.clone(),
            })
            .collect();
        Ok(Json(json!({ "snapshots": snaps })))
    })
    .await
}

async fn take_snapshot(
    State(app): State<AppState>,
    Path(id): Path<String>,
) -> Result<(StatusCode, Json<Value>), ApiError> {
    let guard = app.guard(&id)?;
    blocking(move || {
        let _guard = guard;
        let mut stored = app.store().load_session(&id)?;
        stored.record_snapshot();
        app.store().save_session(&stored)?;
        Ok((
            StatusCode::CREATED,
            Json(json!({"line_count": stored.session.lines().len()})),
        ))
    })
    .await
}

#[derive(Deserialize)]
struct ResetRequest {
    line_count: usize,
}

async fn reset(
    State(app): State<AppState>,
    Path(id): Path<String>,
    body: Bytes,
) -> Result<Json<SessionView>, ApiError> {
    let req: ResetRequest = parse_body(&body)?;
    let guard = app.guard(&id)?;
    blocking(move || {
        let _guard = guard;
        let mut stored = app.store().load_session(&id)?;
        match stored.reset_to(req.line_count) {
            None => {
                return Err(ApiError::new(
                    StatusCode::NOT_FOUND,
                    "not_found",
                    format!("no snapshot at line count {}", req.line_count),
                ))
            }
            Some(Err(e)) => return Err(ApiError::bad_request(e.to_string())),
            Some(Ok(())) => {}
        }
        app.store().save_session(&stored)?;
        Ok(Json(SessionView::from(&stored)))
    })
    .await
}

#[derive(Deserialize)]
struct AnnotateRequest {
    target: AnnotationTarget,
    #[serde(flatten)]
    kind: AnnotationKind,
    #[serde(default)]
    note: Option<String>,
    #[serde(default)]
    author: Option<String>,
}

async fn list_annotations(
    State(app): State<AppState>,
    Path(id): Path<String>,
) -> Result<Json<Value>, ApiError> {
    blocking(move || {
        app.store().load_session(&id)?;
        let annotations = app.store().load_annotations(&id)?;
        Ok(Json(json!({ "annotations": annotations })))
    })
    .await
}

async fn annotate(
    State(app): State<AppState>,
    Path(id): Path<String>,
    body: Bytes,
) -> Result<(StatusCode, Json<Annotation>), ApiError> {
    let req: AnnotateRequest = parse_body(&body)?;
    let guard = app.guard(&id)?;
    blocking(move || {
        let _guard = guard;
        let stored = app.store().load_session(&id)?;
        let mut annotations = app.store().load_annotations(&id)?;
        let annotation = Annotation {
            session_id: id.clone(),
            target: req.target,
            kind: req.kind,
            note: req.note,
            author: req.author,
        };
        check_annotation(&stored.session, &annotations, &annotation)?;
        annotations.push(annotation.clone());
        app.store().save_annotations(&id, &annotations)?;
        Ok((StatusCode::CREATED, Json(annotation)))
    })
    .await
}

fn build_export(app: &AppState, id: &str) -> Result<TranscriptExport, ApiError> {
    let stored = app.store().load_session(id)?;
    let annotations = app.store().load_annotations(id)?;
    Ok(TranscriptExport::from_session(
        &stored.session,
        stored.story_id.as_deref(),
        &annotations,
    ))
}

async fn export_json(
    State(app): State<AppState>,
    Path(id): Path<String>,
) -> Result<Json<TranscriptExport>, ApiError> {
    blocking(move || Ok(Json(build_export(&app, &id)?))).await
}

async fn export_txt(
    State(app): State<AppState>,
    Path(id): Path<String>,
) -> Result<Response, ApiError> {
    blocking(move || {
        let export = build_export(&app, &id)?;
        Ok((
            [(header::CONTENT_TYPE, "text/plain; charset=utf-8")],
            export.rendered_script,
        )
            .into_response())
    })
    .await
}
