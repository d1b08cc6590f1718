//! HTTP+JSON session service for interactive trimap annotation.
//!
//! Routes:
//!
//! | method | path | body / result |
//! |---|---|---|
//! | GET | `/health` | `{"status":"ok"}` |
//! | POST | `/sessions` | raw image bytes, or JSON `{image, gt_alpha?, gt_trimap?}` with base64 PNGs |
//! | GET | `/sessions/{id}` | session state |
//! | POST | `/sessions/{id}/clicks` | `{x, y, label}` |
//! | POST | `/sessions/{id}/undo` | |
//! | POST | `/sessions/{id}/reset` | |
//! | GET | `/sessions/{id}/suggest` | next simulated click against the ground truth |
//! | GET | `/sessions/{id}/trimap.png` | |
//! | GET | `/sessions/{id}/alpha.png` | |
//!
//! State responses accept `?rle=true` to add a run-length trimap. Errors are
//! `{code, message}` JSON.

mod error;
mod session;

use std::sync::Arc;
use std::time::{Duration, Instant};

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, Path, Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde::Deserialize;
use trimap_core::io::{alpha_to_png, trimap_to_png};
use trimap_core::types::LabelClass;

pub use error::{ApiError, ErrorBody};
pub use session::{ServiceConfig, Session, SessionState, SessionStore, Suggestion, TrimapRle, Upload};

pub type AppState = Arc<SessionStore>;

type ApiResult<T> = Result<T, ApiError>;

#[derive(Deserialize, Default)]
struct StateQuery {
    #[serde(default)]
    rle: bool,
}

#[derive(Deserialize)]
struct JsonUpload {
    image: String,
    gt_alpha: Option<String>,
    gt_trimap: Option<String>,
}

#[derive(Deserialize)]
struct ClickBody {
    x: i64,
    y: i64,
    label: String,
}

fn b64(field: &str, s: &str) -> ApiResult<Vec<u8>> {
    B64.decode(s.trim())
        .map_err(|e| ApiError::bad_request("undecodable", format!("undecodable: {field} is not base64 ({e})")))
}

fn parse_upload(headers: &HeaderMap, body: &[u8]) -> ApiResult<Upload> {
    let is_json = headers
        .get(header::CONTENT_TYPE)
        .and_then(|v| v.to_str().ok())
        .is_some_and(|v| v.starts_with("application/json"));
    if !is_json {
        return Ok(Upload {
            image: body.to_vec(),
            ..Default::default()
        });
    }
    let up: JsonUpload = serde_json::from_slice(body)
        .map_err(|e| ApiError::bad_request("invalid_json", format!("invalid upload body: {e}")))?;
    Ok(Upload {
        image: b64("image", &up.image)?,
        gt_alpha: up.gt_alpha.as_deref().map(|s| b64("gt_alpha", s)).transpose()?,
        gt_trimap: up.gt_trimap.as_deref().map(|s| b64("gt_trimap", s)).transpose()?,
    })
}

/// Runs CPU-bound session work off the async executor.
async fn blocking<T: Send + 'static>(f: impl FnOnce() -> ApiResult<T> + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::internal(format!("worker failed: {e}")))?
}

async fn health() -> Json<serde_json::Value> {
    Json(serde_json::json!({ "status": "ok" }))
}

async fn create_session(State(store): State<AppState>, headers: HeaderMap, body: Bytes) -> ApiResult<Response> {
    let upload = parse_upload(&headers, &body)?;
    let state = blocking(move || store.create(upload)).await?;
    Ok((StatusCode::CREATED, Json(state)).into_response())
}

async fn get_state(
    State(store): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<StateQuery>,
) -> ApiResult<Json<SessionState>> {
    blocking(move || store.read(&id, |s| s.state(q.rle))).await.map(Json)
}

async fn add_click(
    State(store): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<StateQuery>,
    body: Bytes,
) -> ApiResult<Json<SessionState>> {
    let click: ClickBody = serde_json::from_slice(&body)
        .map_err(|e| ApiError::bad_request("invalid_json", format!("expected {{x, y, label}}: {e}")))?;
    let label = LabelClass::from_code(&click.label).ok_or_else(|| {
        ApiError::bad_request("invalid_label", format!("label must be F, B or U, got {:?}", click.label))
    })?;
    blocking(move || {
        store.mutate(&id, |s, cfg, p| {
            s.add_click(click.x, click.y, label, cfg, p)?;
            s.state(q.rle)
        })
    })
    .await
    .map(Json)
}

async fn undo(
    State(store): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<StateQuery>,
) -> ApiResult<Json<SessionState>> {
    blocking(move || {
        store.mutate(&id, |s, cfg, p| {
            s.undo(cfg, p)?;
            s.state(q.rle)
        })
    })
    .await
    .map(Json)
}

async fn reset(
    State(store): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<StateQuery>,
) -> ApiResult<Json<SessionState>> {
    blocking(move || {
        store.mutate(&id, |s, cfg, p| {
            s.reset(cfg, p)?;
            s.state(q.rle)
        })
    })
    .await
    .map(Json)
}

async fn suggest(State(store): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<Suggestion>> {
    let cfg = store.cfg.clone();
    blocking(move || store.read(&id, |s| s.suggest(&cfg))).await.map(Json)
}

fn png(bytes: Vec<u8>) -> Response {
    ([(header::CONTENT_TYPE, "image/png")], bytes).into_response()
}

async fn trimap_png(State(store): State<AppState>, Path(id): Path<String>) -> ApiResult<Response> {
    let bytes = blocking(move || store.read(&id, |s| Ok(trimap_to_png(s.trimap())?))).await?;
    Ok(png(bytes))
}

async fn alpha_png(State(store): State<AppState>, Path(id): Path<String>) -> ApiResult<Response> {
    let bytes = blocking(move || store.read(&id, |s| Ok(alpha_to_png(s.alpha())?))).await?;
    Ok(png(bytes))
}

pub fn router(store: AppState) -> Router {
    // base64 JSON uploads of large images need more than axum's 2 MB default
    let body_limit = ((store.cfg.max_megapixels * 1e6 * 3.0 * 2.0) as usize).max(4 << 20);
    Router::new()
        .route("/health", get(health))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_state))
        .route("/sessions/{id}/clicks", post(add_click))
        .route("/sessions/{id}/undo", post(undo))
        .route("/sessions/{id}/reset", post(reset))
        .route("/sessions/{id}/suggest", get(suggest))
        .route("/sessions/{id}/trimap.png", get(trimap_png))
        .route("/sessions/{id}/alpha.png", get(alpha_png))
        .layer(DefaultBodyLimit::max(body_limit))
        .with_state(store)
}

/// Periodically evicts idle sessions until the store is dropped elsewhere.
pub fn spawn_evictor(store: AppState) -> tokio::task::JoinHandle<()> {
    let period = (store.cfg.session_ttl / 4).clamp(Duration::from_millis(50), Duration::from_secs(60));
    tokio::spawn(async move {
        let mut tick = tokio::time::interval(period);
        loop {
            tick.tick().await;
            store.evict_idle(Instant::now());
        }
    })
}

/// Serves on an already-bound listener until the future is dropped or ctrl-c.
pub async fn serve(listener: tokio::net::TcpListener, store: AppState) -> std::io::Result<()> {
    let restored = store.restore();
    if restored > 0 {
        log::info!("restored {restored} persisted sessions");
    }
    let evictor = spawn_evictor(store.clone());
    let result = axum::serve(listener, router(store))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await;
    evictor.abort();
    result
}
