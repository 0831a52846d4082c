use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use screening_core::engine::{EngineError, Phase};
use serde::Serialize;
use serde_json::{json, Value};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ApiError {
    #[error("project {0} not found")]
    ProjectNotFound(String),
    #[error("job {0} not found")]
    JobNotFound(String),
    #[error("invalid config field {field}: {message}")]
    InvalidConfig { field: String, message: String },
    #[error("invalid request: {0}")]
    BadRequest(String),
    #[error("missing or invalid API token")]
    Unauthorized,
    #[error("the corpus is frozen once the first batch has been issued")]
    CorpusFrozen,
    #[error("no documents uploaded yet")]
    EmptyCorpus,
    #[error("screening has not started; request a batch first")]
    NotStarted,
    #[error("training job {0} is already running")]
    JobRunning(String),
    #[error("{} issued documents are still unlabeled", .0.len())]
    PendingLabels(Vec<String>),
    #[error("operation requires phase {expected}, project is in {actual}")]
    WrongPhase { expected: Phase, actual: Phase },
    #[error(transparent)]
    Engine(EngineError),
    #[error("internal error: {0}")]
    Internal(String),
}

impl From<EngineError> for ApiError {
    fn from(e: EngineError) -> Self {
        match e {
            EngineError::PendingLabels(ids) => ApiError::PendingLabels(ids),
            EngineError::WrongPhase { expected, actual } => ApiError::WrongPhase { expected, actual },
            EngineError::InvalidConfig { field, message } => ApiError::InvalidConfig {
                field: field.to_string(),
                message,
            },
            other => ApiError::Engine(other),
        }
    }
}

/// Wire shape of every error response.
#[derive(Debug, Serialize)]
pub struct ErrorBody {
    pub code: &'static str,
    pub message: String,
    pub details: Value,
}

impl ApiError {
    pub fn status(&self) -> StatusCode {
        match self {
            ApiError::ProjectNotFound(_) | ApiError::JobNotFound(_) => StatusCode::NOT_FOUND,
            ApiError::InvalidConfig { .. } | ApiError::BadRequest(_) => StatusCode::BAD_REQUEST,
            ApiError::Unauthorized => StatusCode::UNAUTHORIZED,
            ApiError::CorpusFrozen
            | ApiError::EmptyCorpus
            | ApiError::NotStarted
            | ApiError::JobRunning(_)
            | ApiError::WrongPhase { .. } => StatusCode::CONFLICT,
            ApiError::PendingLabels(_) => StatusCode::PRECONDITION_FAILED,
            ApiError::Engine(e) => match e {
                EngineError::UnknownDocument(_) => StatusCode::NOT_FOUND,
                EngineError::NoModel | EngineError::StaleJob | EngineError::AlreadyBootstrapped => StatusCode::CONFLICT,
                EngineError::ZeroBatch => StatusCode::BAD_REQUEST,
                _ => StatusCode::INTERNAL_SERVER_ERROR,
            },
            ApiError::Internal(_) => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }

    pub fn code(&self) -> &'static str {
        match self {
            ApiError::ProjectNotFound(_) => "project_not_found",
            ApiError::JobNotFound(_) => "job_not_found",
            ApiError::InvalidConfig { .. } => "invalid_config",
            ApiError::BadRequest(_) => "bad_request",
            ApiError::Unauthorized => "unauthorized",
            ApiError::CorpusFrozen => "corpus_frozen",
            ApiError::EmptyCorpus => "empty_corpus",
            ApiError::NotStarted => "not_started",
            ApiError::JobRunning(_) => "job_conflict",
            ApiError::PendingLabels(_) => "pending_labels",
            ApiError::WrongPhase { .. } => "wrong_phase",
            ApiError::Engine(e) => match e {
                EngineError::UnknownDocument(_) => "unknown_document",
                EngineError::NoModel => "no_model",
                EngineError::StaleJob => "stale_job",
                EngineError::AlreadyBootstrapped => "already_bootstrapped",
                EngineError::ZeroBatch => "zero_batch",
                _ => "engine_error",
            },
            ApiError::Internal(_) => "internal",
        }
    }

    fn details(&self) -> Value {
        match self {
            ApiError::InvalidConfig { field, .. } => json!({ "field": field }),
            ApiError::JobRunning(job) => json!({ "job_id": job }),
            ApiError::PendingLabels(ids) => json!({ "pending": ids }),
            ApiError::WrongPhase { expected, actual } => json!({ "expected": expected, "actual": actual }),
            _ => Value::Null,
        }
    }

    pub fn body(&self) -> ErrorBody {
        ErrorBody {
            code: self.code(),
            message: self.to_string(),
            details: self.details(),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = self.status();
        if status.is_server_error() {
            tracing::error!(error = %self, "request failed");
        }
        (status, Json(self.body())).into_response()
    }
}
