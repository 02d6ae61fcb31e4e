use axum::http::{header, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use lhs_pipeline::GatewayError;
use serde::Serialize;

use crate::canonical::canonical_json;

/// Startup failures.
#[derive(Debug, thiserror::Error)]
pub enum ApiError {
    #[error("invalid api config: {0}")]
    Config(String),
    #[error("environment variable {0} holds no token; set it or run read-only")]
    MissingToken(String),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

/// Error body for every non-2xx response.
#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
    pub detail: Option<serde_json::Value>,
}

#[derive(Debug)]
pub struct HttpError {
    pub status: StatusCode,
    pub body: ErrorBody,
}

impl HttpError {
    pub fn new(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        HttpError { status, body: ErrorBody { code: code.into(), message: message.into(), detail: None } }
    }

    pub fn with_detail(mut self, detail: serde_json::Value) -> Self {
        self.body.detail = Some(detail);
        self
    }

    pub fn unauthorized() -> Self {
        HttpError::new(StatusCode::UNAUTHORIZED, "unauthorized", "missing or invalid bearer token")
    }

    pub fn not_found(what: &str, id: &str) -> Self {
        HttpError::new(StatusCode::NOT_FOUND, "not_found", format!("unknown {what}"))
            .with_detail(serde_json::json!({ what: id }))
    }

    pub fn invalid(message: impl Into<String>) -> Self {
        HttpError::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_request", message)
    }

    /// Logs the cause; the client sees a fixed body.
    pub fn internal(cause: impl std::fmt::Display) -> Self {
        tracing::error!(%cause, "internal error");
        HttpError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", "internal error")
    }
}

impl From<GatewayError> for HttpError {
    fn from(e: GatewayError) -> Self {
        let (status, code) = match &e {
            GatewayError::Malformed(_) => (StatusCode::BAD_REQUEST, "malformed"),
            GatewayError::UnknownDevice(_) => (StatusCode::UNPROCESSABLE_ENTITY, "unknown_device"),
            GatewayError::UnknownPatient(_) => (StatusCode::UNPROCESSABLE_ENTITY, "unknown_patient"),
            GatewayError::UnknownAssessmentCode(_) => (StatusCode::UNPROCESSABLE_ENTITY, "unknown_assessment_code"),
            GatewayError::IllegalPayloadKind { .. } => (StatusCode::UNPROCESSABLE_ENTITY, "illegal_payload_kind"),
            GatewayError::EmptyPayload => (StatusCode::UNPROCESSABLE_ENTITY, "empty_payload"),
            GatewayError::SchemaVersionUnsupported(_) => (StatusCode::UNPROCESSABLE_ENTITY, "schema_version_unsupported"),
            GatewayError::InvalidPayload { .. } => (StatusCode::UNPROCESSABLE_ENTITY, "invalid_payload"),
            GatewayError::DuplicateDevice(_) => (StatusCode::CONFLICT, "duplicate_device"),
            GatewayError::Store(inner) => return HttpError::internal(inner),
        };
        HttpError::new(status, code, e.to_string())
    }
}

impl IntoResponse for HttpError {
    fn into_response(self) -> Response {
        let mut res = (self.status, canonical_json(&self.body)).into_response();
        res.headers_mut().insert(header::CONTENT_TYPE, HeaderValue::from_static(crate::canonical::JSON_CONTENT_TYPE));
        if self.status == StatusCode::UNAUTHORIZED {
            res.headers_mut().insert(header::WWW_AUTHENTICATE, HeaderValue::from_static("Bearer"));
        }
        res
    }
}
