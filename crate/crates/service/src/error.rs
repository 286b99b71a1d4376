use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde::Serialize;

/// A failed request, rendered as `{"error": code, "detail": message}`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ApiError {
    NotFound(String),
    BadRequest(String),
    Unavailable(String),
    Internal(String),
}

#[derive(Serialize)]
struct Body<'a> {
    error: &'a str,
    detail: &'a str,
}

impl ApiError {
    pub fn status(&self) -> StatusCode {
        match self {
            ApiError::NotFound(_) => StatusCode::NOT_FOUND,
            ApiError::BadRequest(_) => StatusCode::BAD_REQUEST,
            ApiError::Unavailable(_) => StatusCode::SERVICE_UNAVAILABLE,
            ApiError::Internal(_) => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }

    pub fn code(&self) -> &'static str {
        match self {
            ApiError::NotFound(_) => "not_found",
            ApiError::BadRequest(_) => "bad_request",
            ApiError::Unavailable(_) => "unavailable",
            ApiError::Internal(_) => "internal",
        }
    }

    pub fn detail(&self) -> &str {
        match self {
            ApiError::NotFound(d) | ApiError::BadRequest(d) | ApiError::Unavailable(d) | ApiError::Internal(d) => d,
        }
    }
}

impl From<prominence_core::Error> for ApiError {
    fn from(e: prominence_core::Error) -> Self {
        use prominence_core::Error as E;
        let detail = e.to_string();
        match e {
            E::NotFound(_) => ApiError::NotFound(detail),
            E::NotDisplayed(_) | E::BadAttribute(_) | E::InvalidParameter(_) | E::LengthMismatch { .. } => {
                ApiError::BadRequest(detail)
            }
            _ => ApiError::Internal(detail),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        if let ApiError::Internal(d) = &self {
            log::error!("internal error: {d}");
        }
        let body = Body {
            error: self.code(),
            detail: self.detail(),
        };
        (self.status(), Json(body)).into_response()
    }
}
