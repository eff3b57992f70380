//! HTTP front end for a [`Registry`] and an [`ObjectStore`].
//!
//! | method | path | body / query | response |
//! |---|---|---|---|
//! | POST | `/episodes` | `EpisodeRecord` | `Registration`, 201 when new, 200 when already present |
//! | GET | `/episodes` | filter fields, `include_deleted` | `[EpisodeRecord]` |
//! | GET | `/episodes/{hash}` | | `EpisodeRow` |
//! | PATCH | `/episodes/{hash}/processing` | `ProcessingOutcome` | `EpisodeRecord` |
//! | PATCH | `/episodes/{hash}/deleted` | | `EpisodeRecord` |
//! | PATCH | `/episodes/{hash}/eval` | `{eval_score, eval_success}` | `EpisodeRecord` |
//! | GET | `/episodes/{hash}/preview` | `frame` (default 0) | PPM image, `x-preview-frames` header |
//! | GET | `/stats` | `group_by` | `[GroupStats]` |
//! | PUT, GET, HEAD | `/objects/{key}` | raw bytes | raw bytes, `x-sha256` header |
//! | GET | `/objects` | `prefix` | `[key]` |
//! | GET | `/health` | | `ok` |
//!
//! Errors are `{kind, message, violations}` with status 400 (validation,
//! invalid argument), 401, 404, 409 (conflict, precondition) or 5xx.
//! When a token is configured every route except `/health` requires
//! `Authorization: Bearer <token>`.

use std::future::Future;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::extract::{DefaultBodyLimit, Path, Query, Request, State};
use axum::http::{header, HeaderMap, HeaderValue, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, patch, post};
use axum::{Json, Router};
use serde::Deserialize;
use tokio::net::TcpListener;

use egoverse_core::datamodel::EpisodeRecord;
use egoverse_core::pipeline::preview_name;
use egoverse_core::registry::{GroupBy, ProcessingOutcome, Registry, RegistryError};
use egoverse_core::store::{ObjectStore, StoreError};
use egoverse_core::wire::{ErrorBody, EpisodeQuery, EvalUpdate, PREVIEW_FRAMES_HEADER, SHA256_HEADER};

/// Largest accepted request body.
pub const MAX_BODY_BYTES: usize = 1 << 30;

#[derive(Clone)]
pub struct AppState {
    pub registry: Arc<dyn Registry>,
    pub store: Arc<dyn ObjectStore>,
    pub token: Option<String>,
}

pub struct ApiError(StatusCode, ErrorBody);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(self.1)).into_response()
    }
}

impl From<RegistryError> for ApiError {
    fn from(e: RegistryError) -> Self {
        let status = match &e {
            RegistryError::Validation(_) | RegistryError::InvalidArgument(_) => StatusCode::BAD_REQUEST,
            RegistryError::NotFound(_) => StatusCode::NOT_FOUND,
            RegistryError::Conflict(_) | RegistryError::Precondition(_) => StatusCode::CONFLICT,
            RegistryError::Storage(_) => StatusCode::INTERNAL_SERVER_ERROR,
            RegistryError::Transport { .. } => StatusCode::BAD_GATEWAY,
        };
        ApiError(status, ErrorBody::from(&e))
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        let status = match &e {
            StoreError::NotFound(_) => StatusCode::NOT_FOUND,
            StoreError::InvalidKey(_) => StatusCode::BAD_REQUEST,
            StoreError::Io { .. } => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError(status, ErrorBody::from_store(&e))
    }
}

fn bad_request(message: String) -> ApiError {
    ApiError::from(RegistryError::InvalidArgument(message))
}

impl From<JsonRejection> for ApiError {
    fn from(r: JsonRejection) -> Self {
        bad_request(r.body_text())
    }
}

impl From<QueryRejection> for ApiError {
    fn from(r: QueryRejection) -> Self {
        bad_request(r.body_text())
    }
}

type ApiResult<T> = Result<T, ApiError>;

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/episodes", post(register).get(query))
        .route("/episodes/{hash}", get(get_episode))
        .route("/episodes/{hash}/processing", patch(update_processing))
        .route("/episodes/{hash}/deleted", patch(mark_deleted))
        .route("/episodes/{hash}/eval", patch(record_eval))
        .route("/episodes/{hash}/preview", get(preview))
        .route("/stats", get(stats))
        .route("/objects", get(list_objects))
        .route("/objects/{*key}", get(get_object).put(put_object).head(head_object))
        .route_layer(middleware::from_fn_with_state(state.clone(), require_token))
        .route("/health", get(|| async { "ok" }))
        .layer(DefaultBodyLimit::max(MAX_BODY_BYTES))
        .with_state(state)
}

/// Serves until `shutdown` resolves.
pub async fn serve(
    listener: TcpListener,
    state: AppState,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, router(state)).with_graceful_shutdown(shutdown).await
}

async fn require_token(State(state): State<AppState>, req: Request, next: Next) -> Response {
    if let Some(token) = &state.token {
        let presented = req
            .headers()
            .get(header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "));
        if presented != Some(token.as_str()) {
            let body = ErrorBody {
                kind: "unauthorized".into(),
                message: "missing or wrong bearer token".into(),
                violations: Vec::new(),
            };
            return ApiError(StatusCode::UNAUTHORIZED, body).into_response();
        }
    }
    next.run(req).await
}

async fn register(
    State(s): State<AppState>,
    body: Result<Json<EpisodeRecord>, JsonRejection>,
) -> ApiResult<impl IntoResponse> {
    let Json(record) = body?;
    let reg = s.registry.register_episode(&record).await?;
    let status = if reg.created { StatusCode::CREATED } else { StatusCode::OK };
    Ok((status, Json(reg)))
}

async fn query(
    State(s): State<AppState>,
    q: Result<Query<EpisodeQuery>, QueryRejection>,
) -> ApiResult<impl IntoResponse> {
    let Query(q) = q?;
    Ok(Json(s.registry.query(&q.filter(), q.include_deleted).await?))
}

async fn get_episode(State(s): State<AppState>, Path(hash): Path<String>) -> ApiResult<impl IntoResponse> {
    Ok(Json(s.registry.get(&hash).await?))
}

async fn update_processing(
    State(s): State<AppState>,
    Path(hash): Path<String>,
    body: Result<Json<ProcessingOutcome>, JsonRejection>,
) -> ApiResult<impl IntoResponse> {
    let Json(outcome) = body?;
    Ok(Json(s.registry.update_processing(&hash, &outcome).await?))
}

async fn mark_deleted(State(s): State<AppState>, Path(hash): Path<String>) -> ApiResult<impl IntoResponse> {
    Ok(Json(s.registry.mark_deleted(&hash).await?))
}

async fn record_eval(
    State(s): State<AppState>,
    Path(hash): Path<String>,
    body: Result<Json<EvalUpdate>, JsonRejection>,
) -> ApiResult<impl IntoResponse> {
    let Json(u) = body?;
    Ok(Json(s.registry.record_eval(&hash, u.eval_score, u.eval_success).await?))
}

#[derive(Deserialize)]
struct StatsParams {
    group_by: String,
}

async fn stats(
    State(s): State<AppState>,
    q: Result<Query<StatsParams>, QueryRejection>,
) -> ApiResult<impl IntoResponse> {
    let Query(p) = q?;
    let group_by: GroupBy = p.group_by.parse()?;
    Ok(Json(s.registry.stats(group_by).await?))
}

#[derive(Deserialize)]
struct PreviewParams {
    #[serde(default)]
    frame: usize,
}

async fn preview(
    State(s): State<AppState>,
    Path(hash): Path<String>,
    q: Result<Query<PreviewParams>, QueryRejection>,
) -> ApiResult<Response> {
    let Query(p) = q?;
    let record = s.registry.get(&hash).await?.record;
    let not_found = |m: String| ApiError::from(RegistryError::NotFound(m));
    let dir = record
        .processed_path
        .ok_or_else(|| not_found(format!("episode {hash} has no preview")))?;
    let frames = s.store.list(&format!("{dir}/preview_")).await?;
    let key = format!("{dir}/{}", preview_name(p.frame));
    if !frames.contains(&key) {
        return Err(not_found(format!("preview frame {} of {}", p.frame, frames.len())));
    }
    let bytes = s.store.get(&key).await?;
    let mut headers = HeaderMap::new();
    headers.insert(header::CONTENT_TYPE, HeaderValue::from_static("image/x-portable-pixmap"));
    headers.insert(PREVIEW_FRAMES_HEADER, HeaderValue::from(frames.len()));
    Ok((headers, bytes).into_response())
}

#[derive(Deserialize)]
struct ListParams {
    #[serde(default)]
    prefix: String,
}

async fn list_objects(
    State(s): State<AppState>,
    q: Result<Query<ListParams>, QueryRejection>,
) -> ApiResult<impl IntoResponse> {
    let Query(p) = q?;
    Ok(Json(s.store.list(&p.prefix).await?))
}

async fn get_object(State(s): State<AppState>, Path(key): Path<String>) -> ApiResult<impl IntoResponse> {
    let bytes = s.store.get(&key).await?;
    Ok(([(header::CONTENT_TYPE, "application/octet-stream")], bytes))
}

async fn put_object(State(s): State<AppState>, Path(key): Path<String>, body: Bytes) -> ApiResult<StatusCode> {
    s.store.put(&key, body.to_vec()).await?;
    Ok(StatusCode::NO_CONTENT)
}

async fn head_object(State(s): State<AppState>, Path(key): Path<String>) -> ApiResult<Response> {
    match s.store.head(&key).await? {
        Some(meta) => {
            let mut headers = HeaderMap::new();
            headers.insert(SHA256_HEADER, HeaderValue::from_str(&meta.sha256).expect("hex is a valid header"));
            headers.insert(header::CONTENT_LENGTH, HeaderValue::from(meta.size));
            Ok((StatusCode::OK, headers).into_response())
        }
        None => Ok(StatusCode::NOT_FOUND.into_response()),
    }
}
