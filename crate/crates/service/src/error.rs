use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde_json::{json, Value};

use slotforge_core::config::ConfigError;
use slotforge_core::corpus::CorpusError;
use slotforge_core::induction::{InductionError, PipelineError};
use slotforge_core::proxy::{EpisodeError, ProxyError};
use slotforge_core::session::SessionError;

/// An error response: `{code, message, details}` with an HTTP status.
#[derive(Debug, Clone, PartialEq)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: &'static str,
    pub message: String,
    pub details: Value,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        ApiError { status, code, message: message.into(), details: json!({}) }
    }

    pub fn with_details(mut self, details: Value) -> Self {
        self.details = details;
        self
    }

    pub fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "bad_request", message)
    }

    pub fn session_not_found(id: &str) -> Self {
        Self::new(StatusCode::NOT_FOUND, "session_not_found", format!("no session `{id}`"))
            .with_details(json!({ "session_id": id }))
    }

    pub fn storage(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "storage_error", message)
    }

    pub fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal_error", message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = json!({ "code": self.code, "message": self.message, "details": self.details });
        (self.status, Json(body)).into_response()
    }
}

impl From<ConfigError> for ApiError {
    fn from(e: ConfigError) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "invalid_config", e.to_string())
    }
}

impl From<CorpusError> for ApiError {
    fn from(e: CorpusError) -> Self {
        Self::new(StatusCode::UNPROCESSABLE_ENTITY, "pipeline_failed", e.to_string())
            .with_details(json!({ "stage": "corpus" }))
    }
}

fn induction_error(stage: Option<String>, e: &InductionError) -> ApiError {
    let stage = stage.map_or(Value::Null, Value::String);
    match e {
        InductionError::BadK { k, available } => ApiError::new(StatusCode::BAD_REQUEST, "bad_k", e.to_string())
            .with_details(json!({ "k": k, "available": available, "stage": stage })),
        _ => ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "pipeline_failed", e.to_string())
            .with_details(json!({ "stage": stage })),
    }
}

impl From<PipelineError> for ApiError {
    fn from(e: PipelineError) -> Self {
        induction_error(Some(e.stage.to_string()), &e.source)
    }
}

impl From<SessionError> for ApiError {
    fn from(e: SessionError) -> Self {
        let message = e.to_string();
        match e {
            SessionError::UnknownId { kind, id } => {
                Self::new(StatusCode::NOT_FOUND, "unknown_id", message).with_details(json!({ "kind": kind, "id": id }))
            }
            SessionError::InvalidOp(_) => Self::new(StatusCode::BAD_REQUEST, "invalid_operation", message),
            SessionError::StaleState { submitted, current } => {
                Self::new(StatusCode::CONFLICT, "stale_revision", message)
                    .with_details(json!({ "current_revision": current, "submitted_revision": submitted }))
            }
            SessionError::NoRelevantDocument(_) => {
                Self::new(StatusCode::UNPROCESSABLE_ENTITY, "no_relevant_document", message)
            }
            SessionError::Reader(p) => Self::new(StatusCode::BAD_GATEWAY, "provider_failed", message)
                .with_details(json!({ "attempts": p.attempts() })),
            SessionError::Induction(i) => induction_error(None, &i),
            SessionError::Pipeline(p) => p.into(),
            SessionError::Io { .. } | SessionError::Version { .. } | SessionError::CorruptSnapshot(_) => {
                Self::storage(message)
            }
        }
    }
}

impl From<EpisodeError> for ApiError {
    fn from(e: EpisodeError) -> Self {
        let partial = serde_json::to_value(&e.partial).unwrap_or(Value::Null);
        match e.source {
            ProxyError::Agent(p) => Self::new(StatusCode::BAD_GATEWAY, "agent_failed", p.to_string())
                .with_details(json!({ "attempts": p.attempts(), "partial_trajectory": partial })),
            ProxyError::Config(m) => Self::new(StatusCode::BAD_REQUEST, "invalid_agent_config", m),
            ProxyError::Session(s) => s.into(),
            other => Self::internal(other.to_string()),
        }
    }
}
