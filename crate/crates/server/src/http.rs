//! axum wiring: every `/api/*` request goes through [`Service::dispatch`].

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use axum::extract::rejection::QueryRejection;
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::Router;
use tower_http::services::ServeDir;

use crate::error::ApiError;
use crate::service::Service;

fn json_response(status: u16, body: Vec<u8>) -> Response {
    let status = StatusCode::from_u16(status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
    (status, [(header::CONTENT_TYPE, "application/json")], body).into_response()
}

async fn api(
    State(service): State<Arc<Service>>,
    Path(path): Path<String>,
    query: Result<Query<Vec<(String, String)>>, QueryRejection>,
) -> Response {
    let query = match query {
        Ok(Query(q)) => q,
        Err(e) => {
            let err = ApiError::bad_request("InvalidParameter", e.body_text());
            return json_response(err.status, err.body());
        }
    };
    let (status, body) = match tokio::task::spawn_blocking(move || service.dispatch(&path, &query)).await {
        Ok(r) => r,
        Err(e) => {
            let err = ApiError::internal("Panic", e.to_string());
            (err.status, err.body())
        }
    };
    json_response(status, body)
}

async fn not_found() -> Response {
    let err = ApiError::not_found("NotFound", "no such resource");
    json_response(err.status, err.body())
}

/// API routes plus, when `static_dir` is given, the UI bundle under `/`.
pub fn router(service: Arc<Service>, static_dir: Option<PathBuf>) -> Router {
    let api = Router::new().route("/api/{*path}", get(api)).with_state(service);
    match static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api.fallback(not_found),
    }
}

pub async fn serve(service: Arc<Service>, addr: SocketAddr, static_dir: Option<PathBuf>) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    axum::serve(listener, router(service, static_dir)).await
}
