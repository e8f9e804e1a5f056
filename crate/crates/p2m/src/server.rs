//! HTTP API over a workspace. JSON in, JSON out; errors are
//! `{"error": <code>, "message": <text>}`.

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use p2m_core::dataset::SelectionError;
use p2m_core::DatasetSelection;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::files;
use crate::pipeline::{self, PredictError, PromptSource, SelectionPostError};
use crate::run::{Event, RunError, RunManifest, Workspace};

#[derive(Clone)]
pub struct AppState {
    pub workspace: Arc<Workspace>,
}

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

    fn not_found(message: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, "NotFound", message)
    }
}

#[derive(Serialize)]
struct ErrorBody<'a> {
    error: &'a str,
    message: &'a str,
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(ErrorBody { error: self.code, message: &self.message })).into_response()
    }
}

impl From<RunError> for ApiError {
    fn from(e: RunError) -> Self {
        let msg = e.to_string();
        match e {
            RunError::UnknownRun(_) => Self::new(StatusCode::NOT_FOUND, "UnknownRun", msg),
            RunError::Busy(_) => Self::new(StatusCode::CONFLICT, "RunBusy", msg),
            RunError::InvalidTransition(_) => Self::new(StatusCode::CONFLICT, "InvalidTransition", msg),
            RunError::WorkspaceUnwritable { .. } => Self::new(StatusCode::INTERNAL_SERVER_ERROR, "WorkspaceUnwritable", msg),
            RunError::File(_) => Self::new(StatusCode::INTERNAL_SERVER_ERROR, "Io", msg),
        }
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

#[derive(Deserialize)]
pub struct CreateRun {
    pub prompt: String,
    #[serde(default)]
    pub config: Option<RunConfig>,
}

async fn create_run(State(st): State<AppState>, Json(body): Json<CreateRun>) -> Result<(StatusCode, Json<RunManifest>), ApiError> {
    let config = body.config.unwrap_or_default();
    let manifest = pipeline::create_run(&st.workspace, PromptSource::Text(&body.prompt), config).await.map_err(|e| match e {
        RunError::InvalidTransition(m) => ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "InvalidConfig", m),
        other => other.into(),
    })?;
    Ok((StatusCode::CREATED, Json(manifest)))
}

async fn list_runs(State(st): State<AppState>) -> ApiResult<Vec<RunManifest>> {
    let mut out = Vec::new();
    for id in st.workspace.list()? {
        out.push(st.workspace.run(&id)?.manifest()?);
    }
    Ok(Json(out))
}

async fn get_run(State(st): State<AppState>, Path(id): Path<String>) -> ApiResult<RunManifest> {
    Ok(Json(st.workspace.run(&id)?.manifest()?))
}

fn stage_file(st: &AppState, id: &str, name: &str) -> ApiResult<serde_json::Value> {
    let path = st.workspace.run(id)?.file(name);
    if !path.exists() {
        return Err(ApiError::not_found(format!("{name} not written yet")));
    }
    Ok(Json(files::read_json(&path).map_err(RunError::from)?))
}

async fn datasets(State(st): State<AppState>, Path(id): Path<String>) -> ApiResult<serde_json::Value> {
    stage_file(&st, &id, pipeline::DATASET_CANDIDATES)
}

async fn models(State(st): State<AppState>, Path(id): Path<String>) -> ApiResult<serde_json::Value> {
    stage_file(&st, &id, pipeline::MODEL_CANDIDATES)
}

async fn eval(State(st): State<AppState>, Path(id): Path<String>) -> ApiResult<serde_json::Value> {
    stage_file(&st, &id, pipeline::EVAL_REPORT)
}

async fn select(
    State(st): State<AppState>,
    Path(id): Path<String>,
    Json(selection): Json<DatasetSelection>,
) -> ApiResult<RunManifest> {
    let unprocessable = |code, msg: String| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, code, msg);
    pipeline::post_selection(&st.workspace, &id, selection).await.map(Json).map_err(|e| {
        let msg = e.to_string();
        match e {
            SelectionPostError::Run(r) => r.into(),
            SelectionPostError::Conflict(_) => ApiError::new(StatusCode::CONFLICT, "SelectionConflict", msg),
            SelectionPostError::Invalid(SelectionError::MissingColumn(_)) => unprocessable("MissingColumn", msg),
            SelectionPostError::Invalid(_) => unprocessable("InvalidSelection", msg),
            SelectionPostError::UnknownDataset(_) => unprocessable("UnknownDataset", msg),
            SelectionPostError::Cards(_) => ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "Cards", msg),
        }
    })
}

async fn advance(State(st): State<AppState>, Path(id): Path<String>) -> ApiResult<RunManifest> {
    Ok(Json(pipeline::advance(&st.workspace, &id).await?))
}

#[derive(Deserialize)]
struct Since {
    #[serde(default)]
    since: u64,
}

#[derive(Serialize, Deserialize)]
pub struct EventPage {
    pub events: Vec<Event>,
    /// Pass as `since` on the next poll.
    pub next: u64,
}

async fn events(State(st): State<AppState>, Path(id): Path<String>, Query(q): Query<Since>) -> ApiResult<EventPage> {
    let all = st.workspace.run(&id)?.events()?;
    let next = all.len() as u64;
    let events = all.into_iter().filter(|e| e.seq >= q.since).collect();
    Ok(Json(EventPage { events, next }))
}

#[derive(Deserialize)]
pub struct PredictRequest {
    pub inputs: Vec<String>,
    /// Skip textualizing inputs with the run's instruction.
    #[serde(default)]
    pub raw: bool,
}

#[derive(Serialize, Deserialize)]
pub struct PredictResponse {
    pub outputs: Vec<String>,
}

async fn predict(
    State(st): State<AppState>,
    Path(id): Path<String>,
    Json(body): Json<PredictRequest>,
) -> ApiResult<PredictResponse> {
    let ws = st.workspace.clone();
    let outputs = tokio::task::spawn_blocking(move || pipeline::predict(&ws, &id, &body.inputs, body.raw))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "Internal", e.to_string()))?
        .map_err(|e| {
            let msg = e.to_string();
            match e {
                PredictError::Run(r) => r.into(),
                PredictError::NotReady(_) => ApiError::new(StatusCode::CONFLICT, "NotReady", msg),
                PredictError::Trainer(_) => ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "ArtifactUnavailable", msg),
            }
        })?;
    Ok(Json(PredictResponse { outputs }))
}

pub fn router(workspace: Workspace, ui_dir: Option<PathBuf>) -> Router {
    let state = AppState { workspace: Arc::new(workspace) };
    let mut app = Router::new()
        .route("/runs", post(create_run).get(list_runs))
        .route("/runs/{id}", get(get_run))
        .route("/runs/{id}/datasets", get(datasets))
        .route("/runs/{id}/selection", post(select))
        .route("/runs/{id}/models", get(models))
        .route("/runs/{id}/advance", post(advance))
        .route("/runs/{id}/events", get(events))
        .route("/runs/{id}/eval", get(eval))
        .route("/runs/{id}/predict", post(predict))
        .with_state(state);
    if let Some(dir) = ui_dir {
        app = app.nest_service("/ui", tower_http::services::ServeDir::new(dir));
    }
    app
}

#[derive(Debug, thiserror::Error)]
pub enum ServeError {
    #[error("port {0} is already in use")]
    PortInUse(u16),
    #[error("workspace {0} does not exist")]
    NoWorkspace(PathBuf),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub async fn bind(addr: SocketAddr) -> Result<tokio::net::TcpListener, ServeError> {
    tokio::net::TcpListener::bind(addr).await.map_err(|e| match e.kind() {
        std::io::ErrorKind::AddrInUse => ServeError::PortInUse(addr.port()),
        _ => ServeError::Io(e),
    })
}

/// Serves until ctrl-c.
pub async fn serve(listener: tokio::net::TcpListener, workspace: Workspace, ui_dir: Option<PathBuf>) -> Result<(), ServeError> {
    if !workspace.root().is_dir() {
        return Err(ServeError::NoWorkspace(workspace.root().to_owned()));
    }
    axum::serve(listener, router(workspace, ui_dir))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
