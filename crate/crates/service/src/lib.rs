//! HTTP front end for the rule miner: the appraisal queue, live ingestion,
//! anomaly browsing and the server-sent event feed.

mod state;

pub use state::{AnomalySource, AnomalyView, AppState, Inner};

use std::convert::Infallible;
use std::net::SocketAddr;
use std::sync::Arc;
use std::time::Duration;

use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use rulemine_core::domain::{FieldSpec, KpiRecord, RuleStatus, Timestamp};
use rulemine_core::pipeline::{AnomalyEvent, Flag, PipelineError};
use rulemine_core::rules::{AppraisalAction, AppraisalOutcome, RuleError};
use rulemine_core::Rule;
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;
use tokio_stream::wrappers::BroadcastStream;
use tokio_stream::{Stream, StreamExt};

const DEFAULT_PAGE: usize = 100;
const MAX_PAGE: usize = 1000;
const DEFAULT_PAD: i32 = 8;

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("{0}")]
    NotFound(String),
    #[error("{0}")]
    BadRequest(String),
    #[error("{0}")]
    Conflict(String),
    #[error("{0}")]
    Unprocessable(String),
    #[error("startup: {0}")]
    Startup(String),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error("storage: {0}")]
    Io(#[from] std::io::Error),
}

impl From<RuleError> for ServiceError {
    fn from(e: RuleError) -> Self {
        match e {
            RuleError::UnknownRule(_) => ServiceError::NotFound(e.to_string()),
            RuleError::NotUnappraised { .. } | RuleError::TargetNotAppraised(_) | RuleError::KeyConflict { .. } => {
                ServiceError::Conflict(e.to_string())
            }
            other => ServiceError::BadRequest(other.to_string()),
        }
    }
}

impl ServiceError {
    fn status(&self) -> StatusCode {
        match self {
            ServiceError::NotFound(_) => StatusCode::NOT_FOUND,
            ServiceError::BadRequest(_) => StatusCode::BAD_REQUEST,
            ServiceError::Conflict(_) => StatusCode::CONFLICT,
            ServiceError::Unprocessable(_) => StatusCode::UNPROCESSABLE_ENTITY,
            ServiceError::Pipeline(PipelineError::Rules(e)) => match e {
                RuleError::UnknownRule(_) => StatusCode::NOT_FOUND,
                _ => StatusCode::UNPROCESSABLE_ENTITY,
            },
            ServiceError::Pipeline(PipelineError::Collate(_) | PipelineError::Config(_)) => {
                StatusCode::UNPROCESSABLE_ENTITY
            }
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }
}

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let status = self.status();
        if status.is_server_error() {
            tracing::error!(error = %self, "request failed");
        }
        (status, Json(json!({ "error": self.to_string() }))).into_response()
    }
}

type ApiResult<T> = Result<Json<T>, ServiceError>;
type Shared = Arc<AppState>;

pub fn router(state: Shared) -> Router {
    Router::new()
        .route("/healthz", get(healthz))
        .route("/rules", get(list_rules))
        .route("/rules/{id}", get(get_rule))
        .route("/rules/{id}/appraise", post(appraise))
        .route("/anomalies", get(list_anomalies))
        .route("/anomalies/{id}/series", get(series))
        .route("/ingest", post(ingest))
        .route("/outliers", post(outliers))
        .route("/events", get(events))
        .with_state(state)
}

/// Serves until ctrl-c.
pub async fn serve(state: Shared, listener: tokio::net::TcpListener) -> std::io::Result<()> {
    let addr: SocketAddr = listener.local_addr()?;
    tracing::info!(%addr, "listening");
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}

#[derive(Serialize)]
struct Health {
    status: &'static str,
    fields: Vec<FieldSpec>,
    rules: usize,
    unappraised: usize,
    events: usize,
}

async fn healthz(State(state): State<Shared>) -> Json<Health> {
    let inner = state.lock();
    let rules = inner.runtime.rules();
    Json(Health {
        status: "ok",
        fields: inner.fields.clone(),
        rules: rules.len(),
        unappraised: rules.unappraised().count(),
        events: inner.live.len(),
    })
}

#[derive(Deserialize)]
struct RuleFilter {
    status: Option<String>,
}

async fn list_rules(State(state): State<Shared>, Query(q): Query<RuleFilter>) -> ApiResult<Vec<Rule>> {
    let status = q
        .status
        .as_deref()
        .map(|s| s.parse::<RuleStatus>())
        .transpose()
        .map_err(|e| ServiceError::BadRequest(e.to_string()))?;
    let inner = state.lock();
    Ok(Json(
        inner.runtime.rules().listing(status).into_iter().cloned().collect(),
    ))
}

async fn get_rule(State(state): State<Shared>, Path(id): Path<String>) -> ApiResult<Rule> {
    let inner = state.lock();
    inner
        .runtime
        .rules()
        .get(&id)
        .cloned()
        .map(Json)
        .ok_or_else(|| ServiceError::NotFound(format!("rule {id} not found")))
}

#[derive(Deserialize)]
struct AppraiseRequest {
    #[serde(flatten)]
    action: AppraisalAction,
    #[serde(default)]
    actor: Option<String>,
}

#[derive(Serialize)]
struct AppraiseResponse {
    outcome: AppraisalOutcome,
    /// Current state of every rule the action touched that still exists.
    rules: Vec<Rule>,
}

async fn appraise(
    State(state): State<Shared>,
    Path(id): Path<String>,
    body: Result<Json<AppraiseRequest>, axum::extract::rejection::JsonRejection>,
) -> ApiResult<AppraiseResponse> {
    let Json(req) = body.map_err(|e| ServiceError::BadRequest(e.body_text()))?;
    let mut inner = state.lock();
    let outcome = inner.appraise(&id, &req.action, req.actor.as_deref().unwrap_or("api"))?;
    let rules = outcome
        .affected
        .iter()
        .filter_map(|rid| inner.runtime.rules().get(rid).cloned())
        .collect();
    tracing::info!(rule = %id, action = req.action.name(), "appraised");
    Ok(Json(AppraiseResponse { outcome, rules }))
}

#[derive(Deserialize)]
struct AnomalyFilter {
    /// Comma-separated rule ids; an anomaly is listed if any of them matches it.
    rule_id: Option<String>,
    from: Option<Timestamp>,
    to: Option<Timestamp>,
    source: Option<String>,
    offset: Option<usize>,
    limit: Option<usize>,
}

#[derive(Serialize)]
struct Page<T> {
    total: usize,
    offset: usize,
    limit: usize,
    items: Vec<T>,
}

async fn list_anomalies(State(state): State<Shared>, Query(q): Query<AnomalyFilter>) -> ApiResult<Page<AnomalyView>> {
    let limit = q.limit.unwrap_or(DEFAULT_PAGE).min(MAX_PAGE);
    let offset = q.offset.unwrap_or(0);
    let source = match q.source.as_deref() {
        None => None,
        Some("training") => Some(AnomalySource::Training),
        Some("live") => Some(AnomalySource::Live),
        Some(other) => return Err(ServiceError::BadRequest(format!("unknown source `{other}`"))),
    };
    let inner = state.lock();
    let rules: Vec<Rule> = match &q.rule_id {
        None => Vec::new(),
        Some(ids) => ids
            .split(',')
            .filter(|s| !s.is_empty())
            .map(|id| {
                inner
                    .runtime
                    .rules()
                    .get(id)
                    .cloned()
                    .ok_or_else(|| ServiceError::NotFound(format!("rule {id} not found")))
            })
            .collect::<Result<_, _>>()?,
    };
    let mut all: Vec<AnomalyView> = inner
        .anomalies()
        .into_iter()
        .filter(|a| source.is_none_or(|s| a.source == s))
        .filter(|a| q.from.is_none_or(|f| a.t_end >= f))
        .filter(|a| q.to.is_none_or(|t| a.t_start < t))
        .filter(|a| q.rule_id.is_none() || rules.iter().any(|r| a.matches(r)))
        .collect();
    all.sort_by(|a, b| a.t_start.cmp(&b.t_start).then_with(|| a.cell_id.cmp(&b.cell_id)));
    let total = all.len();
    let items = all.into_iter().skip(offset).take(limit).collect();
    Ok(Json(Page {
        total,
        offset,
        limit,
        items,
    }))
}

#[derive(Deserialize)]
struct SeriesQuery {
    /// Intervals of context on each side of the anomaly.
    pad: Option<i32>,
}

#[derive(Serialize)]
struct SeriesPoint {
    timestamp: Timestamp,
    values: Vec<Option<f64>>,
}

#[derive(Serialize)]
struct SeriesResponse {
    id: String,
    cell_id: String,
    fields: Vec<String>,
    t_start: Timestamp,
    t_end: Timestamp,
    window_start: Timestamp,
    window_end: Timestamp,
    /// Live reference per field for this cell, when known.
    references: Vec<Option<f64>>,
    points: Vec<SeriesPoint>,
}

async fn series(
    State(state): State<Shared>,
    Path(id): Path<String>,
    Query(q): Query<SeriesQuery>,
) -> ApiResult<SeriesResponse> {
    let pad = q.pad.unwrap_or(DEFAULT_PAD).clamp(0, 10_000);
    let inner = state.lock();
    let a = inner
        .anomaly(&id)
        .ok_or_else(|| ServiceError::NotFound(format!("anomaly {id} not found")))?;
    let interval = chrono::Duration::from_std(inner.runtime.config().interval)
        .map_err(|e| ServiceError::BadRequest(e.to_string()))?;
    let window_start = a.t_start - interval * pad;
    let window_end = a.t_end + interval * pad;
    let points = inner
        .series
        .get(&a.cell_id)
        .map(|s| {
            s.range(window_start..=window_end)
                .map(|(t, r)| SeriesPoint {
                    timestamp: *t,
                    values: r.values.clone(),
                })
                .collect()
        })
        .unwrap_or_default();
    let table = inner.runtime.references();
    let references = inner
        .fields
        .iter()
        .map(|f| table.get(&f.name, &a.cell_id, &a.region_id).map(|e| e.reference))
        .collect();
    Ok(Json(SeriesResponse {
        id: a.id,
        cell_id: a.cell_id,
        fields: inner.fields.iter().map(|f| f.name.clone()).collect(),
        t_start: a.t_start,
        t_end: a.t_end,
        window_start,
        window_end,
        references,
        points,
    }))
}

#[derive(Serialize)]
struct IngestResponse {
    accepted: usize,
    events: Vec<AnomalyEvent>,
}

type RecordsBody = Result<Json<Vec<KpiRecord>>, axum::extract::rejection::JsonRejection>;

fn ingest_with(state: &AppState, body: RecordsBody, flag: Flag) -> ApiResult<IngestResponse> {
    let Json(records) = body.map_err(|e| ServiceError::BadRequest(e.body_text()))?;
    let events = state.lock().ingest(&records, flag)?;
    state.publish(&events);
    Ok(Json(IngestResponse {
        accepted: records.len(),
        events,
    }))
}

/// Records scored by the builtin detector.
async fn ingest(State(state): State<Shared>, body: RecordsBody) -> ApiResult<IngestResponse> {
    ingest_with(&state, body, Flag::Detect)
}

/// Records an external detector already flagged as outliers.
async fn outliers(State(state): State<Shared>, body: RecordsBody) -> ApiResult<IngestResponse> {
    ingest_with(&state, body, Flag::Outlier)
}

async fn events(State(state): State<Shared>) -> Sse<impl Stream<Item = Result<Event, Infallible>>> {
    let stream = BroadcastStream::new(state.subscribe()).filter_map(|msg| {
        // a lagging client skips what it missed
        let e = msg.ok()?;
        Some(Ok(Event::default()
            .event("anomaly")
            .id(e.event_id.clone())
            .json_data(&e)
            .unwrap_or_else(|_| Event::default().comment("unserializable event"))))
    });
    Sse::new(stream).keep_alive(KeepAlive::new().interval(Duration::from_secs(15)))
}
