//! The uniform error body `{code, message, retriable}` and the mapping from
//! domain errors to HTTP statuses.

use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use dietwise_core::analytics::AnalyticsError;
use dietwise_core::catalog::CatalogError;
use dietwise_core::detection::DetectionError;
use dietwise_core::preprocess::PreprocessError;
use dietwise_core::profiles::ProfileError;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
    pub retriable: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ApiError {
    pub status: StatusCode,
    pub body: ErrorBody,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        Self { status, body: ErrorBody { code: code.into(), message: message.into(), retriable: false } }
    }

    pub fn retriable(mut self) -> Self {
        self.body.retriable = true;
        self
    }

    pub fn validation(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "validation", message)
    }

    pub fn unauthenticated(message: impl Into<String>) -> Self {
        Self::new(StatusCode::UNAUTHORIZED, "unauthenticated", message)
    }

    pub fn forbidden(message: impl Into<String>) -> Self {
        Self::new(StatusCode::FORBIDDEN, "forbidden", message)
    }

    pub fn not_found(message: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, "not-found", message)
    }

    pub fn precondition(message: impl Into<String>) -> Self {
        Self::new(StatusCode::PRECONDITION_FAILED, "precondition-failed", message)
    }

    pub fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", message)
    }

    pub fn code(&self) -> &str {
        &self.body.code
    }
}

impl std::fmt::Display for ApiError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} {}: {}", self.status.as_u16(), self.body.code, self.body.message)
    }
}

impl std::error::Error for ApiError {}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

impl From<ProfileError> for ApiError {
    fn from(e: ProfileError) -> Self {
        match e {
            ProfileError::Validation(v) => Self::validation(v.to_string()),
            ProfileError::Conflict(_) => Self::new(StatusCode::CONFLICT, "conflict", e.to_string()),
            ProfileError::Authentication => Self::unauthenticated(e.to_string()),
            ProfileError::Store(_) => Self::internal(e.to_string()).retriable(),
            ProfileError::Security(_) | ProfileError::Corrupt(_) => Self::internal(e.to_string()),
        }
    }
}

impl From<DetectionError> for ApiError {
    fn from(e: DetectionError) -> Self {
        let retriable = e.is_retriable();
        let err = match &e {
            DetectionError::Validation { .. } => Self::validation(e.to_string()),
            DetectionError::NotFound(_) => Self::not_found(e.to_string()),
            DetectionError::Unavailable(_) | DetectionError::Upstream { .. } => {
                Self::new(StatusCode::BAD_GATEWAY, "upstream-failure", e.to_string())
            }
            DetectionError::Protocol { .. } => Self::new(StatusCode::BAD_GATEWAY, "upstream-protocol", e.to_string()),
        };
        if retriable {
            err.retriable()
        } else {
            err
        }
    }
}

impl From<AnalyticsError> for ApiError {
    fn from(e: AnalyticsError) -> Self {
        match e {
            AnalyticsError::UndefinedMetric(_) => {
                Self::new(StatusCode::UNPROCESSABLE_ENTITY, "undefined-metric", e.to_string())
            }
            AnalyticsError::EmptySample => Self::new(StatusCode::UNPROCESSABLE_ENTITY, "empty-sample", e.to_string()),
            _ => Self::validation(e.to_string()),
        }
    }
}

impl From<CatalogError> for ApiError {
    fn from(e: CatalogError) -> Self {
        match e {
            CatalogError::NotFound(_) => Self::not_found(e.to_string()),
            CatalogError::Store(_) => Self::internal(e.to_string()).retriable(),
            _ => Self::validation(e.to_string()),
        }
    }
}

impl From<PreprocessError> for ApiError {
    fn from(e: PreprocessError) -> Self {
        match e {
            PreprocessError::Encode(_) => Self::internal(e.to_string()),
            _ => Self::validation(e.to_string()),
        }
    }
}
