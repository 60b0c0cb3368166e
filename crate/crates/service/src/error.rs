use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde::Serialize;
use thiserror::Error;

use ppldetect_core::engine::EngineError;

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("text has {token_count} tokens, at least {min} required")]
    TooShort { token_count: usize, min: usize },
    #[error("text is {bytes} bytes, limit is {max}")]
    TooLarge { bytes: usize, max: usize },
    #[error("bad request: {0}")]
    BadRequest(String),
    #[error("no threshold for {0}")]
    UnknownKey(String),
    #[error("no threshold table loaded")]
    NoTable,
    #[error("scorer backend unavailable: {0}")]
    Backend(String),
    #[error("threshold table rejected: {0}")]
    Reload(String),
    #[error("internal error: {0}")]
    Internal(String),
}

impl ServiceError {
    pub fn status(&self) -> StatusCode {
        match self {
            ServiceError::TooShort { .. } => StatusCode::UNPROCESSABLE_ENTITY,
            ServiceError::TooLarge { .. } => StatusCode::PAYLOAD_TOO_LARGE,
            ServiceError::BadRequest(_) | ServiceError::Reload(_) => StatusCode::BAD_REQUEST,
            ServiceError::UnknownKey(_) => StatusCode::NOT_FOUND,
            ServiceError::NoTable | ServiceError::Backend(_) => StatusCode::SERVICE_UNAVAILABLE,
            ServiceError::Internal(_) => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }

    pub fn code(&self) -> &'static str {
        match self {
            ServiceError::TooShort { .. } => "too_short",
            ServiceError::TooLarge { .. } => "too_large",
            ServiceError::BadRequest(_) => "bad_request",
            ServiceError::UnknownKey(_) => "unknown_threshold_key",
            ServiceError::NoTable => "no_table",
            ServiceError::Backend(_) => "backend_unavailable",
            ServiceError::Reload(_) => "reload_rejected",
            ServiceError::Internal(_) => "internal",
        }
    }
}

impl From<EngineError> for ServiceError {
    fn from(e: EngineError) -> Self {
        match e {
            EngineError::EmptyInput => ServiceError::TooShort {
                token_count: 0,
                min: ppldetect_core::engine::MIN_TOKENS,
            },
            EngineError::TooShort { tokens, min } => ServiceError::TooShort {
                token_count: tokens,
                min,
            },
            e if e.is_backend() => ServiceError::Backend(e.to_string()),
            e => ServiceError::Internal(e.to_string()),
        }
    }
}

/// JSON error body shared by every endpoint.
#[derive(Debug, Serialize)]
pub struct ErrorBody {
    pub error: &'static str,
    pub message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub token_count: Option<usize>,
}

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let token_count = match &self {
            ServiceError::TooShort { token_count, .. } => Some(*token_count),
            _ => None,
        };
        let body = ErrorBody {
            error: self.code(),
            message: self.to_string(),
            token_count,
        };
        (self.status(), Json(body)).into_response()
    }
}
