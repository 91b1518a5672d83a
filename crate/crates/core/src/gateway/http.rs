use std::sync::Arc;

use axum::body::{Body, Bytes};
use axum::extract::{Path, RawQuery, State};
use axum::http::{header, HeaderName, HeaderValue, Method, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde_json::json;

use super::{Gateway, GatewayResponse, RebuildError, WriteMethod};

impl IntoResponse for GatewayResponse {
    fn into_response(self) -> Response {
        let mut resp = Response::new(Body::from(Bytes::copy_from_slice(&self.body)));
        *resp.status_mut() = StatusCode::from_u16(self.status).unwrap_or(StatusCode::BAD_GATEWAY);
        let headers = resp.headers_mut();
        if let Ok(v) = HeaderValue::from_str(&self.content_type) {
            headers.insert(header::CONTENT_TYPE, v);
        }
        for (k, v) in &self.headers {
            if let (Ok(k), Ok(v)) = (HeaderName::try_from(k.as_str()), HeaderValue::from_str(v)) {
                headers.append(k, v);
            }
        }
        resp
    }
}

async fn read(State(gw): State<Arc<Gateway>>, Path(set): Path<String>, RawQuery(q): RawQuery) -> GatewayResponse {
    gw.handle_read(&set, q.as_deref().unwrap_or("")).await
}

fn write_method(m: &Method) -> Option<WriteMethod> {
    match *m {
        Method::POST => Some(WriteMethod::Post),
        Method::PUT => Some(WriteMethod::Put),
        Method::PATCH => Some(WriteMethod::Patch),
        Method::DELETE => Some(WriteMethod::Delete),
        _ => None,
    }
}

async fn write_set(State(gw): State<Arc<Gateway>>, method: Method, Path(set): Path<String>, body: Bytes) -> Response {
    match write_method(&method) {
        Some(m) => gw.handle_write(m, &set, None, &body).await.into_response(),
        None => StatusCode::METHOD_NOT_ALLOWED.into_response(),
    }
}

async fn write_entity(
    State(gw): State<Arc<Gateway>>,
    method: Method,
    Path((set, id)): Path<(String, String)>,
    body: Bytes,
) -> Response {
    match write_method(&method) {
        Some(m) => gw.handle_write(m, &set, Some(&id), &body).await.into_response(),
        None => StatusCode::METHOD_NOT_ALLOWED.into_response(),
    }
}

async fn admin_stats(State(gw): State<Arc<Gateway>>) -> Json<serde_json::Value> {
    Json(gw.stats_summary())
}

async fn admin_rebuild(State(gw): State<Arc<Gateway>>) -> Response {
    let result = tokio::task::spawn_blocking(move || gw.rebuild_stats()).await;
    match result {
        Ok(Ok(version)) => Json(json!({"rebuilt": true, "version": version})).into_response(),
        Ok(Err(RebuildError::AlreadyRunning)) => (
            StatusCode::CONFLICT,
            Json(json!({"error": {"code": "RebuildInProgress", "message": RebuildError::AlreadyRunning.to_string()}})),
        )
            .into_response(),
        Ok(Err(e)) => (
            StatusCode::BAD_REQUEST,
            Json(json!({"error": {"code": "RebuildUnavailable", "message": e.to_string()}})),
        )
            .into_response(),
        Err(e) => (StatusCode::INTERNAL_SERVER_ERROR, e.to_string()).into_response(),
    }
}

async fn admin_queries(State(gw): State<Arc<Gateway>>) -> Json<serde_json::Value> {
    Json(gw.queries_json())
}

async fn admin_metrics(State(gw): State<Arc<Gateway>>) -> Json<serde_json::Value> {
    Json(gw.metrics_json())
}

/// `/odatax/{set}` for reads and inserts, `/odatax/{set}/{id}` for updates
/// and deletes, plus the `/odatax-admin/*` endpoints.
pub fn router(gw: Arc<Gateway>) -> Router {
    Router::new()
        .route("/odatax/{set}", get(read).post(write_set))
        .route(
            "/odatax/{set}/{id}",
            axum::routing::put(write_entity).patch(write_entity).delete(write_entity),
        )
        .route("/odatax-admin/stats", get(admin_stats))
        .route("/odatax-admin/stats/rebuild", post(admin_rebuild))
        .route("/odatax-admin/queries", get(admin_queries))
        .route("/odatax-admin/metrics", get(admin_metrics))
        .with_state(gw)
}

/// Serves until `shutdown` resolves.
pub async fn serve(
    gw: Arc<Gateway>,
    listener: tokio::net::TcpListener,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, router(gw)).with_graceful_shutdown(shutdown).await
}
