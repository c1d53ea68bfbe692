use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use serde::Serialize;

use tracelens_core::Error;

/// Every failure reaches the client as `{"code", "message"}`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: String,
    pub message: String,
}

#[derive(Serialize)]
struct Body<'a> {
    code: &'a str,
    message: &'a str,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        ApiError {
            status,
            code: code.to_string(),
            message: message.into(),
        }
    }

    pub fn bad_request(code: &str, message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, code, message)
    }

    pub fn not_found(message: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, "NOT_FOUND", message)
    }

    pub fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "INTERNAL", message)
    }
}

impl std::fmt::Display for ApiError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.code, self.message)
    }
}

impl std::error::Error for ApiError {}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::UnknownState(_) | Error::ZoomMissingTrace(_) => StatusCode::NOT_FOUND,
            Error::ManifestParse { .. }
            | Error::TraceParse { .. }
            | Error::TraceNesting { .. }
            | Error::ModelParse { .. }
            | Error::ConfigParse(_)
            | Error::ConstraintSyntax { .. }
            | Error::Scenario(_)
            | Error::UnknownStrategy(_) => StatusCode::BAD_REQUEST,
            Error::FilterFields(_)
            | Error::EvalMissingField(_)
            | Error::DiffKeyMismatch(_)
            | Error::AbstractConfigMismatch(_)
            | Error::DiffConfigMismatch
            | Error::ExamUnreachable(_) => StatusCode::UNPROCESSABLE_ENTITY,
            Error::MineTimeout { .. } | Error::MineOom { .. } => StatusCode::UNPROCESSABLE_ENTITY,
            Error::ScanIo { .. } | Error::Io(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError::new(status, e.code(), e.to_string())
    }
}

impl From<std::io::Error> for ApiError {
    fn from(e: std::io::Error) -> Self {
        ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "IO", e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = serde_json::to_string(&Body {
            code: &self.code,
            message: &self.message,
        })
        .expect("error bodies always serialize");
        (self.status, [("content-type", "application/json")], body).into_response()
    }
}
