use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use fairkit::bag::BagError;
use fairkit::catalog::CatalogError;
use fairkit::flows::FlowError;
use fairkit::idspace::IdError;
use serde::{Deserialize, Serialize};

use crate::ServerError;

/// The body of every failed request. `code` is the name of the module
/// error that caused it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, thiserror::Error)]
#[error("{code}: {detail}")]
pub struct ApiError {
    pub http_status: u16,
    pub code: String,
    pub detail: String,
}

/// HTTP status for an error code.
pub fn status_for(code: &str) -> u16 {
    match code {
        "NotFound" | "UnknownRoute" => 404,
        "Unauthorized" => 401,
        "Forbidden" => 403,
        "MethodNotAllowed" => 405,
        "Conflict"
        | "KeyConflict"
        | "KeyViolation"
        | "DuplicateName"
        | "DanglingReference"
        | "SupersededImmutable"
        | "NotResumable"
        | "NotEmpty"
        | "Locked" => 409,
        "UnreachableAsset" | "FetchFailed" | "NoHandler" | "DigestMismatchAfterFetch" => 502,
        "CorruptLog" | "IoFailure" | "Internal" | "ConfigError" | "NotInitialized"
        | "BindFailure" | "Interrupted" => 500,
        _ => 400,
    }
}

impl ApiError {
    pub fn new(code: &str, detail: impl Into<String>) -> Self {
        ApiError {
            http_status: status_for(code),
            code: code.to_string(),
            detail: detail.into(),
        }
    }

    pub fn internal(detail: impl std::fmt::Display) -> Self {
        ApiError::new("Internal", detail.to_string())
    }
}

macro_rules! from_module_error {
    ($($t:ty),*) => {$(
        impl From<$t> for ApiError {
            fn from(e: $t) -> Self {
                ApiError::new(e.code(), e.to_string())
            }
        }
    )*};
}

from_module_error!(IdError, CatalogError, FlowError, BagError, ServerError);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status =
            StatusCode::from_u16(self.http_status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        (status, Json(self)).into_response()
    }
}
