//! HTTP interface over the store, gateway and orchestrator report.
//!
//! Every handler is a thin adapter: it parses the request, calls one module
//! operation and encodes the result canonically. Nothing is cached between
//! requests.

pub mod canonical;
pub mod config;
pub mod error;

use std::future::Future;
use std::sync::Arc;

use axum::body::{Body, Bytes};
use axum::extract::{DefaultBodyLimit, Path, Query, Request, State};
use axum::http::{header, HeaderValue, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::Router;
use chrono::{DateTime, Duration, Utc};
use lhs_core::registry::registry;
use lhs_core::{Clock, IsoWeekId, PatientId, PatientRecord};
use lhs_pipeline::{parse_submission, pipeline_report, schedule_compliance, write_dead_letters, Gateway};
use lhs_store::{write_export_part, ExportError, ExportFormat, ExportScope, Statistic, Store, TimeRange};
use serde::{Deserialize, Serialize};

pub use canonical::{canonical_json, Canonical, JSON_CONTENT_TYPE};
pub use config::{ApiConfig, DEFAULT_TOKEN_ENV};
pub use error::{ApiError, ErrorBody, HttpError};

/// Method and path of every route, in the order they are registered.
pub const ROUTES: &[(&str, &str)] = &[
    ("POST", "/v1/ingest"),
    ("GET", "/v1/patients"),
    ("GET", "/v1/patients/{id}"),
    ("GET", "/v1/patients/{id}/series/{metric}"),
    ("GET", "/v1/patients/{id}/compliance/{iso_week}"),
    ("GET", "/v1/cohort/{metric}/{statistic}"),
    ("GET", "/v1/pipeline/report"),
    ("GET", "/v1/pipeline/dead-letters"),
    ("GET", "/v1/export"),
];

/// Rows per chunk of a streamed export.
const EXPORT_CHUNK_ROWS: usize = 1000;

#[derive(Clone)]
pub struct AppState {
    store: Arc<Store>,
    clock: Arc<dyn Clock>,
    gateway: Arc<Gateway>,
    config: Arc<ApiConfig>,
    token: Option<Arc<str>>,
}

impl AppState {
    pub fn new(store: Arc<Store>, clock: Arc<dyn Clock>, config: ApiConfig, token: Option<String>) -> Self {
        let gateway = Arc::new(Gateway::new(store.clone(), clock.clone()));
        AppState { store, clock, gateway, config: Arc::new(config), token: token.map(Arc::from) }
    }

    pub fn store(&self) -> &Arc<Store> {
        &self.store
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Page<T> {
    pub items: Vec<T>,
    pub offset: usize,
    pub limit: usize,
    pub total: usize,
    pub next_offset: Option<usize>,
}

impl<T: Clone> Page<T> {
    pub fn slice(all: &[T], offset: usize, limit: usize) -> Self {
        let start = offset.min(all.len());
        let end = start.saturating_add(limit).min(all.len());
        let next_offset = (end < all.len()).then_some(end);
        Page { items: all[start..end].to_vec(), offset, limit, total: all.len(), next_offset }
    }
}

#[derive(Debug, Default, Deserialize)]
struct PageQuery {
    offset: Option<usize>,
    limit: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
struct RangeQuery {
    from: Option<String>,
    to: Option<String>,
}

#[derive(Debug, Default, Deserialize)]
struct WindowQuery {
    window: Option<String>,
}

#[derive(Debug, Default, Deserialize)]
struct ExportQuery {
    scope: Option<String>,
    format: Option<String>,
}

type HttpResult<T> = Result<T, HttpError>;

pub fn router(state: AppState) -> Router {
    let limit = state.config.max_body_bytes;
    Router::new()
        .route("/v1/ingest", post(ingest))
        .route("/v1/patients", get(list_patients))
        .route("/v1/patients/{id}", get(get_patient))
        .route("/v1/patients/{id}/series/{metric}", get(series))
        .route("/v1/patients/{id}/compliance/{iso_week}", get(compliance))
        .route("/v1/cohort/{metric}/{statistic}", get(cohort))
        .route("/v1/pipeline/report", get(report))
        .route("/v1/pipeline/dead-letters", get(dead_letters))
        .route("/v1/export", get(export))
        .fallback(|| async { HttpError::new(StatusCode::NOT_FOUND, "not_found", "no such route") })
        .layer(DefaultBodyLimit::max(limit))
        .layer(middleware::from_fn_with_state(state.clone(), auth_and_log))
        .with_state(state)
}

/// Runs until `shutdown` resolves.
pub async fn serve(
    listener: tokio::net::TcpListener,
    state: AppState,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, router(state)).with_graceful_shutdown(shutdown).await
}

/// Byte comparison whose duration does not depend on where inputs differ.
fn token_matches(given: &[u8], expected: &[u8]) -> bool {
    if given.len() != expected.len() {
        return false;
    }
    given.iter().zip(expected).fold(0u8, |acc, (a, b)| acc | (a ^ b)) == 0
}

async fn auth_and_log(State(state): State<AppState>, req: Request, next: Next) -> Response {
    let method = req.method().clone();
    let path = req.uri().path().to_string();
    let authorized = match &state.token {
        None => true,
        Some(expected) => req
            .headers()
            .get(header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "))
            .is_some_and(|t| token_matches(t.trim().as_bytes(), expected.as_bytes())),
    };
    let res = if authorized { next.run(req).await } else { HttpError::unauthorized().into_response() };
    tracing::info!(target: "lhs_api::access", %method, %path, status = res.status().as_u16());
    res
}

async fn ingest(State(state): State<AppState>, body: Bytes) -> HttpResult<Response> {
    if state.config.read_only {
        return Err(HttpError::new(StatusCode::FORBIDDEN, "read_only", "service is read-only"));
    }
    let envelope = parse_submission(&body)?;
    let gateway = state.gateway.clone();
    let receipt = tokio::task::spawn_blocking(move || gateway.submit_assessment(envelope))
        .await
        .map_err(HttpError::internal)??;
    Ok(Canonical(StatusCode::CREATED, receipt).into_response())
}

fn page_bounds(config: &ApiConfig, q: &PageQuery) -> HttpResult<(usize, usize)> {
    let limit = q.limit.unwrap_or(config.default_page_size);
    if limit == 0 || limit > config.max_page_size {
        return Err(HttpError::invalid(format!("limit must be in 1..={}", config.max_page_size)));
    }
    Ok((q.offset.unwrap_or(0), limit))
}

async fn list_patients(State(state): State<AppState>, Query(q): Query<PageQuery>) -> HttpResult<Response> {
    let (offset, limit) = page_bounds(&state.config, &q)?;
    let all: Vec<PatientRecord> = state.store.read().patients().cloned().collect();
    Ok(canonical::ok(Page::slice(&all, offset, limit)).into_response())
}

fn known_patient(state: &AppState, id: &str) -> HttpResult<PatientRecord> {
    state.store.read().patient(&PatientId::new(id)).cloned().ok_or_else(|| HttpError::not_found("patient", id))
}

async fn get_patient(State(state): State<AppState>, Path(id): Path<String>) -> HttpResult<Response> {
    Ok(canonical::ok(known_patient(&state, &id)?).into_response())
}

fn parse_instant(name: &str, raw: Option<&str>) -> HttpResult<Option<DateTime<Utc>>> {
    raw.map(|s| {
        DateTime::parse_from_rfc3339(s)
            .map(|t| t.with_timezone(&Utc))
            .map_err(|_| HttpError::invalid(format!("{name} must be an RFC 3339 instant")).with_detail(s.into()))
    })
    .transpose()
}

fn parse_range(q: &RangeQuery) -> HttpResult<TimeRange> {
    let range = TimeRange { from: parse_instant("from", q.from.as_deref())?, to: parse_instant("to", q.to.as_deref())? };
    if let (Some(f), Some(t)) = (range.from, range.to) {
        if f > t {
            return Err(HttpError::invalid("from is after to"));
        }
    }
    Ok(range)
}

fn known_metric(code: &str) -> HttpResult<()> {
    registry().metric(code).map(|_| ()).ok_or_else(|| HttpError::not_found("metric", code))
}

async fn series(
    State(state): State<AppState>,
    Path((id, metric)): Path<(String, String)>,
    Query(q): Query<RangeQuery>,
) -> HttpResult<Response> {
    known_metric(&metric)?;
    let range = parse_range(&q)?;
    known_patient(&state, &id)?;
    let s = state.store.read().series(&PatientId::new(&id), &metric, range).map_err(HttpError::internal)?;
    Ok(canonical::ok(s).into_response())
}

async fn compliance(State(state): State<AppState>, Path((id, week)): Path<(String, String)>) -> HttpResult<Response> {
    let week: IsoWeekId =
        week.parse().map_err(|_| HttpError::invalid("iso_week must look like 2025-W03").with_detail(week.clone().into()))?;
    known_patient(&state, &id)?;
    let c = schedule_compliance(&state.store.read(), &PatientId::new(&id), week)?;
    Ok(canonical::ok(c).into_response())
}

async fn cohort(
    State(state): State<AppState>,
    Path((metric, stat)): Path<(String, String)>,
    Query(q): Query<RangeQuery>,
) -> HttpResult<Response> {
    known_metric(&metric)?;
    let stat: Statistic = stat.parse().map_err(|e: lhs_store::UnknownStatistic| HttpError::invalid(e.to_string()))?;
    let range = parse_range(&q)?;
    Ok(canonical::ok(state.store.read().cohort_aggregate(&metric, stat, range)).into_response())
}

/// `all`, or a trailing window such as `15m`, `24h` or `7d` ending now.
pub fn parse_window(raw: Option<&str>, now: DateTime<Utc>) -> Result<TimeRange, String> {
    let Some(s) = raw.filter(|s| *s != "all") else { return Ok(TimeRange::all()) };
    let bad = || format!("window {s:?} is not all or <n>m, <n>h, <n>d");
    let (n, unit) = s.split_at(s.len().saturating_sub(1));
    let n: i64 = n.parse().map_err(|_| bad())?;
    let span = match unit {
        "m" => Duration::try_minutes(n),
        "h" => Duration::try_hours(n),
        "d" => Duration::try_days(n),
        _ => None,
    }
    .filter(|_| n > 0)
    .ok_or_else(bad)?;
    let from = now.checked_sub_signed(span).ok_or_else(bad)?;
    Ok(TimeRange { from: Some(from), to: Some(now) })
}

async fn report(State(state): State<AppState>, Query(q): Query<WindowQuery>) -> HttpResult<Response> {
    let window = parse_window(q.window.as_deref(), state.clock.now()).map_err(HttpError::invalid)?;
    Ok(canonical::ok(pipeline_report(&state.store.read(), window)).into_response())
}

async fn dead_letters(State(state): State<AppState>) -> HttpResult<Response> {
    let mut out = Vec::new();
    write_dead_letters(&state.store.read(), &mut out).map_err(HttpError::internal)?;
    Ok(([(header::CONTENT_TYPE, HeaderValue::from_static("text/csv; charset=utf-8"))], out).into_response())
}

async fn export(State(state): State<AppState>, Query(q): Query<ExportQuery>) -> HttpResult<Response> {
    let scope: ExportScope = q.scope.as_deref().unwrap_or("all").parse().map_err(|e: ExportError| match e {
        ExportError::UnknownScope(s) if s.starts_with("patient:") => HttpError::not_found("patient", &s["patient:".len()..]),
        other => HttpError::invalid(other.to_string()),
    })?;
    let format: ExportFormat = q
        .format
        .as_deref()
        .unwrap_or("csv")
        .parse()
        .map_err(|e: ExportError| HttpError::invalid(e.to_string()))?;
    let rows = lhs_store::export_rows(&state.store.read(), &scope).map_err(|e| match e {
        ExportError::UnknownScope(_) => HttpError::not_found("scope", &scope.to_string()),
        other => HttpError::internal(other),
    })?;
    // The header goes out even when there are no rows.
    let n_chunks = rows.len().div_ceil(EXPORT_CHUNK_ROWS).max(1);
    let rows = Arc::new(rows);
    let chunks = futures_util::stream::iter((0..n_chunks).map(move |i| {
        let start = i * EXPORT_CHUNK_ROWS;
        let end = (start + EXPORT_CHUNK_ROWS).min(rows.len());
        let mut buf = Vec::new();
        write_export_part(&rows[start..end], format, i == 0, &mut buf).map(|_| Bytes::from(buf))
    }));
    let mut res = Body::from_stream(chunks).into_response();
    res.headers_mut().insert(header::CONTENT_TYPE, HeaderValue::from_static(format.content_type()));
    Ok(res)
}
