//! Structured API errors rendered as `{"error": code, "detail": text}`.

use std::fmt;

use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ApiError {
    #[serde(skip)]
    pub status: u16,
    #[serde(rename = "error")]
    pub code: String,
    pub detail: String,
}

impl ApiError {
    pub fn new(status: u16, code: &str, detail: impl Into<String>) -> Self {
        ApiError { status, code: code.to_string(), detail: detail.into() }
    }

    pub fn bad_request(code: &str, detail: impl Into<String>) -> Self {
        ApiError::new(400, code, detail)
    }

    pub fn not_found(code: &str, detail: impl Into<String>) -> Self {
        ApiError::new(404, code, detail)
    }

    pub fn internal(code: &str, detail: impl Into<String>) -> Self {
        ApiError::new(500, code, detail)
    }

    pub fn body(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("error serializes")
    }
}

impl fmt::Display for ApiError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} ({}): {}", self.code, self.status, self.detail)
    }
}

impl std::error::Error for ApiError {}
