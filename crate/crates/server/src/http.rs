//! Axum routes under `/api/v1`, bearer-token extraction, and the telemetry
//! middleware.

use std::collections::HashMap;
use std::sync::Arc;
use std::time::Instant;

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, MatchedPath, Path, Query, Request, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use dietwise_core::profiles::{ProfileFields, SessionToken};
use serde::de::DeserializeOwned;
use serde_json::json;

use crate::error::ApiError;
use crate::service::{EvalSplit, Service};
use crate::telemetry::OTHER_ENDPOINT;

type AppState = Arc<Service>;
type ApiResult<T> = Result<T, ApiError>;

pub const METRICS_PATH: &str = "/metrics";
pub const MAX_BODY_BYTES: usize = 16 << 20;

/// API routes, with `/metrics` appended when `serve_metrics` is set.
pub fn router(service: AppState, serve_metrics: bool) -> Router {
    let api = Router::new()
        .route("/api/v1/auth/register", post(register))
        .route("/api/v1/auth/login", post(login))
        .route("/api/v1/auth/logout", post(logout))
        .route("/api/v1/profile", get(get_profile).put(put_profile))
        .route("/api/v1/scan", post(scan))
        .route("/api/v1/foods/{id}", get(food))
        .route("/api/v1/survey/responses", post(survey_submit))
        .route("/api/v1/survey/summary", get(survey_summary))
        .route("/api/v1/eval/report", get(eval_report))
        .route("/api/v1/health", get(health))
        .fallback(not_found)
        .layer(DefaultBodyLimit::max(MAX_BODY_BYTES))
        .layer(middleware::from_fn_with_state(service.clone(), track));
    let api = if serve_metrics { api.merge(metrics_router()) } else { api };
    api.with_state(service)
}

/// `/metrics` alone, for a separate telemetry listener.
pub fn metrics_router() -> Router<AppState> {
    Router::new().route(METRICS_PATH, get(metrics))
}

async fn track(State(service): State<AppState>, req: Request, next: Next) -> Response {
    let endpoint = req
        .extensions()
        .get::<MatchedPath>()
        .map_or(OTHER_ENDPOINT.to_string(), |m| m.as_str().to_string());
    let telemetry = service.telemetry();
    let started = Instant::now();
    let response = {
        let _guard = telemetry.start();
        next.run(req).await
    };
    telemetry.record(&endpoint, response.status().as_u16(), started.elapsed().as_secs_f64() * 1000.0);
    response
}

fn bearer(headers: &HeaderMap) -> Option<SessionToken> {
    let value = headers.get(header::AUTHORIZATION)?.to_str().ok()?;
    let (scheme, token) = value.split_once(' ')?;
    (scheme.eq_ignore_ascii_case("bearer") && !token.trim().is_empty()).then(|| SessionToken::new(token.trim()))
}

fn parse<T: DeserializeOwned>(body: &[u8]) -> ApiResult<T> {
    serde_json::from_slice(body).map_err(|e| ApiError::validation(format!("request body: {e}")))
}

/// Runs CPU-heavy work (credential hashing) off the async workers.
async fn blocking<T: Send + 'static>(f: impl FnOnce() -> ApiResult<T> + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f).await.map_err(|e| ApiError::internal(e.to_string()))?
}

async fn register(State(s): State<AppState>, body: Bytes) -> ApiResult<Response> {
    let req = parse(&body)?;
    let profile = blocking(move || s.register(req)).await?;
    Ok((StatusCode::CREATED, Json(profile)).into_response())
}

async fn login(State(s): State<AppState>, body: Bytes) -> ApiResult<Response> {
    let req = parse(&body)?;
    let session = blocking(move || s.login(req)).await?;
    Ok(Json(session).into_response())
}

async fn logout(State(s): State<AppState>, headers: HeaderMap) -> ApiResult<StatusCode> {
    s.logout(bearer(&headers).as_ref())?;
    Ok(StatusCode::NO_CONTENT)
}

async fn get_profile(State(s): State<AppState>, headers: HeaderMap) -> ApiResult<Response> {
    Ok(Json(s.profile(bearer(&headers).as_ref())?).into_response())
}

async fn put_profile(State(s): State<AppState>, headers: HeaderMap, body: Bytes) -> ApiResult<Response> {
    let fields: ProfileFields = parse(&body)?;
    Ok(Json(s.update_profile(bearer(&headers).as_ref(), fields)?).into_response())
}

async fn scan(State(s): State<AppState>, headers: HeaderMap, body: Bytes) -> ApiResult<Response> {
    let req = parse(&body)?;
    Ok(Json(s.handle_scan(bearer(&headers).as_ref(), req).await?).into_response())
}

async fn food(State(s): State<AppState>, Path(id): Path<String>) -> ApiResult<Response> {
    Ok(Json(s.food(&id)?).into_response())
}

async fn survey_submit(State(s): State<AppState>, headers: HeaderMap, body: Bytes) -> ApiResult<Response> {
    let submission = parse(&body)?;
    let stored = s.handle_survey_submit(bearer(&headers).as_ref(), submission)?;
    Ok((StatusCode::CREATED, Json(json!({ "stored": stored }))).into_response())
}

async fn survey_summary(State(s): State<AppState>, headers: HeaderMap) -> ApiResult<Response> {
    Ok(Json(s.handle_survey_summary(bearer(&headers).as_ref())?).into_response())
}

async fn eval_report(
    State(s): State<AppState>,
    headers: HeaderMap,
    Query(query): Query<HashMap<String, String>>,
) -> ApiResult<Response> {
    let split = match query.get("split").map(String::as_str) {
        Some("val") | None => EvalSplit::Val,
        Some("test") => EvalSplit::Test,
        Some(other) => return Err(ApiError::validation(format!("split {other:?}: expected val or test"))),
    };
    let threshold = query
        .get("threshold")
        .map(|t| t.parse::<f64>().map_err(|e| ApiError::validation(format!("threshold: {e}"))))
        .transpose()?;
    Ok(Json(s.handle_eval(bearer(&headers).as_ref(), split, threshold)?).into_response())
}

async fn health(State(s): State<AppState>) -> Json<serde_json::Value> {
    Json(json!({
        "status": "ok",
        "foods": s.catalog().len(),
        "dataset_images": s.dataset().map(|d| d.coco.images().len()),
    }))
}

async fn metrics(State(s): State<AppState>) -> Response {
    ([(header::CONTENT_TYPE, "text/plain; version=0.0.4; charset=utf-8")], s.render_metrics()).into_response()
}

async fn not_found() -> ApiError {
    ApiError::not_found("no such route")
}
