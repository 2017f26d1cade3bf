use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde_json::json;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("unknown session {0}")]
    UnknownSession(String),
    #[error("unknown policy {0}")]
    UnknownPolicy(String),
    #[error("unknown scenario {0}")]
    UnknownScenario(String),
    #[error("it is not the user's turn: an agent reply is still being generated")]
    TurnOrder,
    #[error("session {0} is closed")]
    AlreadyClosed(String),
    #[error("session {0} is still open; close it before rating")]
    SessionOpen(String),
    #[error("{0}")]
    ScoreOutOfRange(String),
    #[error("{0}")]
    BadRequest(String),
    #[error("need at least two raters sharing a rated session for {0}")]
    InsufficientRaters(String),
    #[error("no parseable agent turn after {attempts} attempts: {detail}")]
    GenerationUnparseable { attempts: usize, detail: String },
    #[error("missing or invalid bearer token")]
    Unauthorized,
    #[error("internal: {0}")]
    Internal(String),
}

impl ServiceError {
    pub fn code(&self) -> &'static str {
        match self {
            ServiceError::UnknownSession(_) => "unknown_session",
            ServiceError::UnknownPolicy(_) => "unknown_policy",
            ServiceError::UnknownScenario(_) => "unknown_scenario",
            ServiceError::TurnOrder => "turn_order",
            ServiceError::AlreadyClosed(_) => "already_closed",
            ServiceError::SessionOpen(_) => "session_open",
            ServiceError::ScoreOutOfRange(_) => "score_out_of_range",
            ServiceError::BadRequest(_) => "bad_request",
            ServiceError::InsufficientRaters(_) => "insufficient_raters",
            ServiceError::GenerationUnparseable { .. } => "generation_unparseable",
            ServiceError::Unauthorized => "unauthorized",
            ServiceError::Internal(_) => "internal",
        }
    }

    pub fn status(&self) -> StatusCode {
        match self {
            ServiceError::UnknownSession(_)
            | ServiceError::UnknownPolicy(_)
            | ServiceError::UnknownScenario(_) => StatusCode::NOT_FOUND,
            ServiceError::TurnOrder | ServiceError::AlreadyClosed(_) | ServiceError::SessionOpen(_) => {
                StatusCode::CONFLICT
            }
            ServiceError::ScoreOutOfRange(_) | ServiceError::InsufficientRaters(_) => {
                StatusCode::UNPROCESSABLE_ENTITY
            }
            ServiceError::BadRequest(_) => StatusCode::BAD_REQUEST,
            ServiceError::GenerationUnparseable { .. } => StatusCode::SERVICE_UNAVAILABLE,
            ServiceError::Unauthorized => StatusCode::UNAUTHORIZED,
            ServiceError::Internal(_) => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }

    pub fn retryable(&self) -> bool {
        matches!(self, ServiceError::GenerationUnparseable { .. })
    }
}

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let body = json!({
            "error": self.code(),
            "message": self.to_string(),
            "retryable": self.retryable(),
        });
        (self.status(), Json(body)).into_response()
    }
}
