//! JSON-over-HTTP front end for an [`Engine`].
//!
//! Every success body is `{"schema_version": 1, "data": ...}` and every
//! error body is `{"schema_version": 1, "error": {"code", "message"}}`.
//! Handlers only translate payloads and delegate; scoring happens in the
//! engine.

use std::collections::VecDeque;
use std::net::SocketAddr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use scanquery::engine::{Engine, EngineError, IndexInfo, IndexSpec, QueryHit, QuerySource, QuerySpec};
use scanquery::query::{nard_curve, NardPoint, QueryTrace, TopKResult, TraceStep};
use scanquery::scan::{read_scans, AngularWindow, LaserScan, ScanRecord};
use scanquery::store::EpsilonParams;

pub const SCHEMA_VERSION: u32 = 1;
/// Traces kept for `GET /api/query/{qid}/trace`; older ones are evicted.
pub const TRACE_CAPACITY: usize = 256;

#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: &'static str,
    pub message: String,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self { status, code, message: message.into() }
    }

    fn malformed(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "malformed_payload", message)
    }
}

impl From<EngineError> for ApiError {
    fn from(e: EngineError) -> Self {
        let status = match &e {
            EngineError::IndexMissing | EngineError::IndexStale { .. } => StatusCode::CONFLICT,
            EngineError::UnknownId(_) => StatusCode::NOT_FOUND,
            EngineError::InvalidWindow(_) => StatusCode::UNPROCESSABLE_ENTITY,
            EngineError::InvalidRequest(_) | EngineError::Scan(_) => StatusCode::BAD_REQUEST,
            EngineError::Inference(scanquery::inference::InferenceError::InputShape(_)) => StatusCode::BAD_REQUEST,
            EngineError::WeightsMissing(_) => StatusCode::SERVICE_UNAVAILABLE,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        Self::new(status, e.code(), e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = json!({
            "schema_version": SCHEMA_VERSION,
            "error": { "code": self.code, "message": self.message },
        });
        (self.status, Json(body)).into_response()
    }
}

fn ok<T: Serialize>(data: T) -> Json<Value> {
    Json(json!({ "schema_version": SCHEMA_VERSION, "data": data }))
}

type ApiResult = Result<Json<Value>, ApiError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WindowPayload {
    pub start: f64,
    pub span: f64,
}

/// Exactly one of `scan` and `scan_id`; `window` restricts either.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QueryPayload {
    #[serde(default)]
    pub scan: Option<ScanRecord>,
    #[serde(default)]
    pub scan_id: Option<u64>,
    #[serde(default)]
    pub window: Option<WindowPayload>,
    pub k: usize,
    #[serde(default)]
    pub t: Option<usize>,
    #[serde(default)]
    pub seed: u64,
}

impl QueryPayload {
    pub fn into_spec(self) -> Result<QuerySpec, ApiError> {
        let source = match (self.scan, self.scan_id) {
            (Some(rec), None) => QuerySource::Scan(
                LaserScan::try_from(rec).map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "invalid_scan", e.to_string()))?,
            ),
            (None, Some(id)) => QuerySource::ScanId(id),
            _ => return Err(ApiError::malformed("give exactly one of `scan` and `scan_id`")),
        };
        let window = self
            .window
            .map(|w| AngularWindow::new(w.start, w.span))
            .transpose()
            .map_err(|e| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_window", e.to_string()))?;
        Ok(QuerySpec { source, window, k: self.k, t: self.t, seed: self.seed })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IndexPayload {
    #[serde(default)]
    pub epsilon: Option<f64>,
    #[serde(default)]
    pub auto: bool,
    #[serde(default)]
    pub samples: Option<usize>,
    #[serde(default)]
    pub directions: Option<usize>,
    #[serde(default)]
    pub seed: Option<u64>,
}

impl IndexPayload {
    pub fn into_spec(self) -> Result<IndexSpec, ApiError> {
        match (self.epsilon, self.auto) {
            (Some(e), false) if e.is_finite() && e >= 0.0 => Ok(IndexSpec::Epsilon(e)),
            (Some(e), false) => Err(ApiError::malformed(format!("epsilon must be a non-negative number, got {e}"))),
            (None, true) => {
                let d = EpsilonParams::default();
                Ok(IndexSpec::Auto(EpsilonParams {
                    samples: self.samples.unwrap_or(d.samples),
                    directions: self.directions.unwrap_or(d.directions),
                    seed: self.seed.unwrap_or(d.seed),
                    ..d
                }))
            }
            _ => Err(ApiError::malformed("give either `epsilon` or `auto: true`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryResponse {
    pub qid: String,
    pub k: usize,
    pub evaluations: usize,
    pub results: Vec<QueryHit>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceResponse {
    pub qid: String,
    pub k: usize,
    pub steps: Vec<TraceStep>,
    /// Empty when the store held fewer than k records.
    pub nard: Vec<NardPoint>,
}

struct CachedTrace {
    trace: QueryTrace,
    result: TopKResult,
}

/// Small LRU keyed by query id; most recent at the back.
#[derive(Default)]
struct TraceCache {
    entries: VecDeque<(String, Arc<CachedTrace>)>,
}

impl TraceCache {
    fn insert(&mut self, qid: String, t: CachedTrace) {
        if self.entries.len() == TRACE_CAPACITY {
            self.entries.pop_front();
        }
        self.entries.push_back((qid, Arc::new(t)));
    }

    fn get(&mut self, qid: &str) -> Option<Arc<CachedTrace>> {
        let pos = self.entries.iter().position(|(q, _)| q == qid)?;
        let entry = self.entries.remove(pos)?;
        let t = Arc::clone(&entry.1);
        self.entries.push_back(entry);
        Some(t)
    }
}

pub struct AppState {
    engine: RwLock<Engine>,
    traces: Mutex<TraceCache>,
    next_qid: AtomicU64,
}

impl AppState {
    pub fn new(engine: Engine) -> Arc<Self> {
        Arc::new(Self {
            engine: RwLock::new(engine),
            traces: Mutex::new(TraceCache::default()),
            next_qid: AtomicU64::new(1),
        })
    }
}

fn poisoned() -> ApiError {
    ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", "engine lock poisoned")
}

/// Runs engine work off the async executor.
async fn blocking<T: Send + 'static>(
    f: impl FnOnce() -> Result<T, ApiError> + Send + 'static,
) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))?
}

fn parse_json<T: serde::de::DeserializeOwned>(body: &[u8]) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::malformed(e.to_string()))
}

async fn health(State(s): State<Arc<AppState>>) -> ApiResult {
    let e = s.engine.read().map_err(|_| poisoned())?;
    let index = e.index_info();
    let current = index.as_ref().is_some_and(|i| i.store_version == e.len() as u64);
    Ok(ok(json!({
        "status": "ok",
        "records": e.len(),
        "index": index,
        "index_current": current,
    })))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ScanBatch {
    scans: Vec<ScanRecord>,
}

/// Accepts `{"scans": [...]}` as JSON, or interchange lines otherwise.
async fn post_scans(State(s): State<Arc<AppState>>, headers: HeaderMap, body: Bytes) -> ApiResult {
    let is_json = headers
        .get(header::CONTENT_TYPE)
        .and_then(|v| v.to_str().ok())
        .is_some_and(|v| v.starts_with("application/json"));
    let invalid = |e: scanquery::scan::ScanError| ApiError::new(StatusCode::BAD_REQUEST, "invalid_scan", e.to_string());
    let scans: Vec<LaserScan> = if is_json {
        parse_json::<ScanBatch>(&body)?
            .scans
            .into_iter()
            .map(LaserScan::try_from)
            .collect::<Result<_, _>>()
            .map_err(invalid)?
    } else {
        read_scans(&body[..]).map_err(invalid)?
    };
    if scans.is_empty() {
        return Err(ApiError::malformed("no scans in request"));
    }
    let ids = blocking(move || {
        let mut e = s.engine.write().map_err(|_| poisoned())?;
        Ok(e.ingest(scans)?)
    })
    .await?;
    Ok(ok(json!({ "ids": ids })))
}

async fn build_index(State(s): State<Arc<AppState>>, body: Bytes) -> ApiResult {
    let spec = parse_json::<IndexPayload>(&body)?.into_spec()?;
    let info: IndexInfo = blocking(move || {
        let mut e = s.engine.write().map_err(|_| poisoned())?;
        Ok(e.build_index(&spec)?)
    })
    .await?;
    Ok(ok(info))
}

async fn query(State(s): State<Arc<AppState>>, body: Bytes) -> ApiResult {
    let spec = parse_json::<QueryPayload>(&body)?.into_spec()?;
    let k = spec.k;
    let state = Arc::clone(&s);
    let out = blocking(move || {
        let e = state.engine.read().map_err(|_| poisoned())?;
        Ok(e.query(&spec)?)
    })
    .await?;
    let qid = format!("q{}", s.next_qid.fetch_add(1, Ordering::Relaxed));
    let response = QueryResponse {
        qid: qid.clone(),
        k,
        evaluations: out.trace.len(),
        results: out.hits,
    };
    s.traces
        .lock()
        .map_err(|_| poisoned())?
        .insert(qid, CachedTrace { trace: out.trace, result: out.result });
    Ok(ok(response))
}

async fn trace(State(s): State<Arc<AppState>>, Path(qid): Path<String>) -> ApiResult {
    let cached = s
        .traces
        .lock()
        .map_err(|_| poisoned())?
        .get(&qid)
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "unknown_query", format!("no trace for query {qid}")))?;
    let k = cached.trace.k;
    let nard = if cached.trace.len() >= k {
        nard_curve(&cached.trace, k, &cached.result).map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "query_error", e.to_string()))?
    } else {
        Vec::new()
    };
    Ok(ok(TraceResponse { qid, k, steps: cached.trace.steps.clone(), nard }))
}

async fn get_scan(State(s): State<Arc<AppState>>, Path(id): Path<u64>) -> ApiResult {
    let e = s.engine.read().map_err(|_| poisoned())?;
    Ok(ok(ScanRecord::from(e.scan(id)?)))
}

async fn bitmap(State(s): State<Arc<AppState>>, Path(id): Path<u64>) -> Result<Response, ApiError> {
    let png = blocking(move || {
        let e = s.engine.read().map_err(|_| poisoned())?;
        Ok(e.render(id)?)
    })
    .await?;
    Ok(([(header::CONTENT_TYPE, "image/png")], png).into_response())
}

async fn not_found() -> ApiError {
    ApiError::new(StatusCode::NOT_FOUND, "not_found", "no such endpoint")
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/api/health", get(health))
        .route("/api/scans", post(post_scans))
        .route("/api/scans/{id}", get(get_scan))
        .route("/api/scans/{id}/bitmap.png", get(bitmap))
        .route("/api/index/build", post(build_index))
        .route("/api/query", post(query))
        .route("/api/query/{qid}/trace", get(trace))
        .fallback(not_found)
        .with_state(state)
}

/// Serves until ctrl-c.
pub async fn serve(engine: Engine, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    eprintln!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(AppState::new(engine)))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
