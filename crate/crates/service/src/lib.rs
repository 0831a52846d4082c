//! HTTP+JSON interface for live screening projects.
//!
//! Every route lives under `/v1`:
//!
//! | method | path | |
//! |---|---|---|
//! | GET  | `/health` | liveness, no token required |
//! | GET  | `/projects` | all projects |
//! | POST | `/projects` | create from a config object |
//! | GET  | `/projects/{id}` | session view |
//! | POST | `/projects/{id}/documents` | JSONL upload, until the corpus freezes |
//! | GET  | `/projects/{id}/batch?limit=N` | next documents to screen |
//! | POST | `/projects/{id}/labels` | `{"records": [...]}` |
//! | POST | `/projects/{id}/retrain` | start a training job |
//! | GET  | `/projects/{id}/jobs/{job}` | job status |
//! | GET  | `/projects/{id}/metrics` | live metrics |
//! | GET  | `/projects/{id}/advice` | stop advice |
//! | POST | `/projects/{id}/phase` | `{"to": "prioritized_screening" \| "done"}` |
//!
//! Errors are `{"code", "message", "details"}` with a matching status.
//! With a token configured, every route but `/health` needs
//! `Authorization: Bearer <token>`.

pub mod error;
pub mod jobs;
pub mod registry;
pub mod views;

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::rejection::QueryRejection;
use axum::extract::{DefaultBodyLimit, Path, Query, Request, State};
use axum::http::{header, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use serde::Deserialize;
use serde_json::json;
use tokio::net::TcpListener;

pub use error::{ApiError, ErrorBody};
pub use jobs::{JobStatus, JobView};
pub use registry::{ProjectHandle, ProjectSettings, RecoveryError, Registry};
pub use views::*;

/// Uploads of large corpora exceed axum's 2 MB default.
const MAX_UPLOAD_BYTES: usize = 512 * 1024 * 1024;

#[derive(Debug, Clone, Default)]
pub struct ServiceConfig {
    /// `None` keeps everything in memory.
    pub data_dir: Option<PathBuf>,
    pub token: Option<String>,
    /// Holds new training jobs in `queued` for this long before they run;
    /// lets clients exercise in-flight job handling.
    pub job_start_delay: Duration,
}

#[derive(Clone)]
pub struct AppState {
    registry: Arc<Registry>,
    token: Option<Arc<str>>,
    job_start_delay: Duration,
}

impl AppState {
    pub fn new(config: &ServiceConfig) -> Result<Self, RecoveryError> {
        let registry = match &config.data_dir {
            Some(dir) => Registry::open(dir)?,
            None => Registry::in_memory(),
        };
        Ok(AppState {
            registry: Arc::new(registry),
            token: config.token.as_deref().map(Arc::from),
            job_start_delay: config.job_start_delay,
        })
    }

    pub fn registry(&self) -> &Arc<Registry> {
        &self.registry
    }
}

pub fn router(state: AppState) -> Router {
    let projects = Router::new()
        .route("/projects", get(list_projects).post(create_project))
        .route("/projects/:id", get(get_project))
        .route(
            "/projects/:id/documents",
            post(upload_documents).layer(DefaultBodyLimit::max(MAX_UPLOAD_BYTES)),
        )
        .route("/projects/:id/batch", get(next_batch))
        .route("/projects/:id/labels", post(submit_labels))
        .route("/projects/:id/retrain", post(trigger_retrain))
        .route("/projects/:id/jobs/:job", get(get_job))
        .route("/projects/:id/metrics", get(get_metrics))
        .route("/projects/:id/advice", get(get_advice))
        .route("/projects/:id/phase", post(set_phase))
        .route_layer(middleware::from_fn_with_state(state.clone(), require_token));
    let v1 = Router::new().route("/health", get(health)).merge(projects);
    Router::new()
        .nest("/v1", v1)
        .fallback(|| async { ApiError::BadRequest("no such route".into()).with_status(StatusCode::NOT_FOUND) })
        .with_state(state)
}

impl ApiError {
    fn with_status(self, status: StatusCode) -> Response {
        (status, Json(self.body())).into_response()
    }
}

/// Binds first so that an occupied port fails before anything else starts.
pub async fn bind(addr: SocketAddr) -> std::io::Result<TcpListener> {
    TcpListener::bind(addr).await
}

/// Serves until `shutdown` resolves.
pub async fn serve(
    listener: TcpListener,
    state: AppState,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    tracing::info!(addr = %listener.local_addr()?, "listening");
    axum::serve(listener, router(state)).with_graceful_shutdown(shutdown).await
}

async fn require_token(State(state): State<AppState>, req: Request, next: Next) -> Result<Response, ApiError> {
    if let Some(token) = &state.token {
        let presented = req
            .headers()
            .get(header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "));
        if presented != Some(token.as_ref()) {
            return Err(ApiError::Unauthorized);
        }
    }
    Ok(next.run(req).await)
}

fn parse_json<T: DeserializeOwned>(body: &Bytes) -> Result<T, ApiError> {
    if body.is_empty() {
        return serde_json::from_str("null").map_err(|e| ApiError::BadRequest(e.to_string()));
    }
    serde_json::from_slice(body).map_err(|e| ApiError::BadRequest(e.to_string()))
}

/// Runs a project operation off the async workers; they may fsync or train.
async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, ApiError> + Send + 'static) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::Internal(format!("worker failed: {e}")))?
}

async fn health() -> Json<serde_json::Value> {
    Json(json!({ "status": "ok" }))
}

async fn list_projects(State(state): State<AppState>) -> Result<Json<Vec<SessionView>>, ApiError> {
    let views = state
        .registry
        .list()?
        .iter()
        .map(|h| h.session())
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Json(views))
}

async fn create_project(State(state): State<AppState>, body: Bytes) -> Result<(StatusCode, Json<SessionView>), ApiError> {
    let settings = ProjectSettings::from_json(parse_json(&body)?)?;
    let registry = Arc::clone(&state.registry);
    let handle = blocking(move || registry.create(settings)).await?;
    Ok((StatusCode::CREATED, Json(handle.session()?)))
}

async fn get_project(State(state): State<AppState>, Path(id): Path<String>) -> Result<Json<SessionView>, ApiError> {
    Ok(Json(state.registry.get(&id)?.session()?))
}

async fn upload_documents(
    State(state): State<AppState>,
    Path(id): Path<String>,
    body: Bytes,
) -> Result<Json<UploadResponse>, ApiError> {
    let handle = state.registry.get(&id)?;
    let text = String::from_utf8(body.to_vec()).map_err(|_| ApiError::BadRequest("body is not UTF-8".into()))?;
    Ok(Json(blocking(move || handle.upload(&text)).await?))
}

#[derive(Debug, Deserialize)]
struct BatchQuery {
    limit: Option<usize>,
}

async fn next_batch(
    State(state): State<AppState>,
    Path(id): Path<String>,
    query: Result<Query<BatchQuery>, QueryRejection>,
) -> Result<Json<BatchView>, ApiError> {
    let Query(q) = query.map_err(|e| ApiError::BadRequest(e.body_text()))?;
    let handle = state.registry.get(&id)?;
    let limit = q.limit.unwrap_or(handle.settings().engine.batch_size);
    if limit == 0 {
        return Err(ApiError::BadRequest("limit must be positive".into()));
    }
    Ok(Json(blocking(move || handle.batch(limit)).await?))
}

async fn submit_labels(
    State(state): State<AppState>,
    Path(id): Path<String>,
    body: Bytes,
) -> Result<Json<LabelsResponse>, ApiError> {
    let req: LabelsRequest = parse_json(&body)?;
    let handle = state.registry.get(&id)?;
    let h = Arc::clone(&handle);
    let mut response = blocking(move || h.label(req.records)).await?;
    if response.accepted > 0 && handle.wants_auto_retrain()? {
        // a concurrent trigger may win the race; that is fine
        match start_job(&state, handle).await {
            Ok(job) => response.job = Some(job),
            Err(e) => tracing::debug!(error = %e, "auto retrain not started"),
        }
    }
    Ok(Json(response))
}

async fn start_job(state: &AppState, handle: Arc<ProjectHandle>) -> Result<JobView, ApiError> {
    let h = Arc::clone(&handle);
    let (job, view) = blocking(move || h.prepare_retrain()).await?;
    let delay = state.job_start_delay;
    let job_id = view.job_id.clone();
    tokio::spawn(async move {
        if !delay.is_zero() {
            tokio::time::sleep(delay).await;
        }
        if let Err(e) = handle.mark_running(&job_id) {
            tracing::error!(error = %e, "cannot mark job running");
        }
        let outcome = tokio::task::spawn_blocking(move || handle.run_job(&job_id, job)).await;
        if let Err(e) = outcome {
            tracing::error!(error = %e, "training worker panicked");
        }
    });
    Ok(view)
}

async fn trigger_retrain(
    State(state): State<AppState>,
    Path(id): Path<String>,
) -> Result<(StatusCode, Json<JobView>), ApiError> {
    let handle = state.registry.get(&id)?;
    let view = start_job(&state, handle).await?;
    Ok((StatusCode::ACCEPTED, Json(view)))
}

async fn get_job(State(state): State<AppState>, Path((id, job)): Path<(String, String)>) -> Result<Json<JobView>, ApiError> {
    Ok(Json(state.registry.get(&id)?.job(&job)?))
}

async fn get_metrics(State(state): State<AppState>, Path(id): Path<String>) -> Result<Json<MetricsView>, ApiError> {
    Ok(Json(state.registry.get(&id)?.metrics()))
}

async fn get_advice(State(state): State<AppState>, Path(id): Path<String>) -> Result<Json<AdviceView>, ApiError> {
    Ok(Json(state.registry.get(&id)?.advice()))
}

async fn set_phase(State(state): State<AppState>, Path(id): Path<String>, body: Bytes) -> Result<Json<SessionView>, ApiError> {
    let req: PhaseRequest = parse_json(&body)?;
    let handle = state.registry.get(&id)?;
    Ok(Json(blocking(move || handle.set_phase(req.to)).await?))
}
