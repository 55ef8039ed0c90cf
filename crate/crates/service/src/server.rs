use std::collections::HashMap;
use std::future::Future;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, MutexGuard};

use axum::body::Bytes;
use axum::extract::{Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use titlebias_core::active::ActiveLoop;
use titlebias_core::corpus::{CorpusStore, PartitionKind, Verdict, VoteOutcome};
use titlebias_core::Error as CoreError;

use crate::api::{
    AnnotatorProgress, BatchItem, BatchView, CloseRequest, CloseResponse, ErrorBody, ErrorResponse, Item,
    ItemsResponse, MetricsHistory, ProgressResponse, StoreCounts, VoteAck, VoteRequest, VoteStatus, VotesResponse,
};
use crate::config::ServiceConfig;
use crate::ServiceError;

const DEFAULT_ITEMS: usize = 10;

/// Hooks for exercising failure paths.
#[derive(Clone, Default)]
pub struct Faults {
    /// Runs on the retrain thread, before the scorer is retrained, with the
    /// number of the iteration being closed. A panic here is a retrain crash.
    pub before_retrain: Option<Arc<dyn Fn(u32) + Send + Sync>>,
    /// Answer every n-th vote request with 503 after its votes are stored,
    /// as if the acknowledgement were lost in transit.
    pub drop_vote_ack_every: Option<u64>,
}

impl std::fmt::Debug for Faults {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Faults")
            .field("before_retrain", &self.before_retrain.is_some())
            .field("drop_vote_ack_every", &self.drop_vote_ack_every)
            .finish()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Principal {
    Annotator(String),
    Operator,
}

struct Shared {
    lp: Mutex<ActiveLoop>,
    tokens: HashMap<String, Principal>,
    annotators: Vec<String>,
    /// (annotator, idempotency key) -> the vote it was first used for.
    keys: Mutex<HashMap<(String, String), (String, Verdict)>>,
    faults: Faults,
    vote_requests: AtomicU64,
}

/// Shared state behind every handler.
#[derive(Clone)]
pub struct AppState(Arc<Shared>);

impl std::fmt::Debug for AppState {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("AppState").field("annotators", &self.0.annotators).finish()
    }
}

fn lock<T>(m: &Mutex<T>) -> MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|poisoned| poisoned.into_inner())
}

impl AppState {
    pub fn new(lp: ActiveLoop, config: &ServiceConfig, faults: Faults) -> Result<Self, ServiceError> {
        config.validate()?;
        let mut tokens: HashMap<String, Principal> = config
            .annotators
            .iter()
            .map(|a| (a.token.clone(), Principal::Annotator(a.id.clone())))
            .collect();
        if let Some(op) = &config.operator_token {
            tokens.insert(op.clone(), Principal::Operator);
        }
        Ok(Self(Arc::new(Shared {
            lp: Mutex::new(lp),
            tokens,
            annotators: config.annotators.iter().map(|a| a.id.clone()).collect(),
            keys: Mutex::new(HashMap::new()),
            faults,
            vote_requests: AtomicU64::new(0),
        })))
    }

    /// Open the store and the loop under the configured data dir, starting
    /// a new loop if none exists yet.
    pub fn open(config: &ServiceConfig, faults: Faults) -> Result<Self, ServiceError> {
        config.validate()?;
        let store = CorpusStore::open(config.store_dir(), config.date_range)?;
        if store.is_empty() {
            return Err(ServiceError::Config(format!(
                "corpus store {} is empty; ingest titles first",
                config.store_dir().display()
            )));
        }
        let lp = ActiveLoop::open_or_start(store, config.loop_dir(), config.active.clone())?;
        Self::new(lp, config, faults)
    }

    pub fn router(&self) -> Router {
        Router::new()
            .route("/health", get(health))
            .route("/v1/batch/current", get(batch_current))
            .route("/v1/items", get(items))
            .route("/v1/votes", post(votes))
            .route("/v1/iterations/close", post(close))
            .route("/v1/progress", get(progress))
            .route("/v1/metrics/history", get(metrics_history))
            .with_state(self.clone())
    }

    /// Run `f` against the loop while holding its lock.
    pub fn with_loop<R>(&self, f: impl FnOnce(&ActiveLoop) -> R) -> R {
        f(&lock(&self.0.lp))
    }

    fn authenticate(&self, headers: &HeaderMap) -> Result<Principal, ApiError> {
        let token = headers
            .get(header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "))
            .map(str::trim)
            .ok_or_else(|| ApiError::new(StatusCode::UNAUTHORIZED, "unauthorized", "missing bearer token"))?;
        self.0
            .tokens
            .get(token)
            .cloned()
            .ok_or_else(|| ApiError::new(StatusCode::UNAUTHORIZED, "unauthorized", "unknown token"))
    }

    fn annotator(&self, headers: &HeaderMap) -> Result<String, ApiError> {
        match self.authenticate(headers)? {
            Principal::Annotator(id) => Ok(id),
            Principal::Operator => Err(ApiError::new(
                StatusCode::FORBIDDEN,
                "forbidden",
                "the operator token cannot vote",
            )),
        }
    }
}

/// Serve `state` on `listener` until `shutdown` resolves.
pub async fn serve<F>(listener: tokio::net::TcpListener, state: AppState, shutdown: F) -> std::io::Result<()>
where
    F: Future<Output = ()> + Send + 'static,
{
    axum::serve(listener, state.router()).with_graceful_shutdown(shutdown).await
}

/// Open the data dir, bind the configured address and serve until Ctrl-C.
pub async fn run(config: ServiceConfig) -> Result<(), ServiceError> {
    let state = AppState::open(&config, Faults::default())?;
    let listener = tokio::net::TcpListener::bind(&config.listen)
        .await
        .map_err(|e| ServiceError::Io(format!("cannot bind {}: {e}", config.listen)))?;
    let addr = listener.local_addr().map_err(|e| ServiceError::Io(e.to_string()))?;
    eprintln!("annotation service listening on http://{addr}");
    serve(listener, state, async {
        let _ = tokio::signal::ctrl_c().await;
    })
    .await
    .map_err(|e| ServiceError::Io(e.to_string()))
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    kind: &'static str,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, kind: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            kind,
            message: message.into(),
        }
    }

    fn busy() -> Self {
        Self::new(StatusCode::CONFLICT, "busy", "the iteration is being closed and retrained")
    }

    fn internal(kind: &'static str, e: impl std::fmt::Display) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, kind, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = ErrorResponse {
            error: ErrorBody {
                kind: self.kind.to_string(),
                message: self.message,
            },
        };
        (self.status, Json(body)).into_response()
    }
}

async fn health() -> &'static str {
    "ok"
}

async fn batch_current(State(app): State<AppState>, headers: HeaderMap) -> Result<Json<BatchView>, ApiError> {
    app.authenticate(&headers)?;
    let lp = lock(&app.0.lp);
    let items = lp
        .current_batch()
        .into_iter()
        .map(|r| BatchItem {
            title_id: r.id.clone(),
            text: r.text.clone(),
            outlet: r.outlet.clone(),
            bias_group: r.bias_group,
            date: r.date,
        })
        .collect();
    Ok(Json(BatchView {
        iteration: lp.state().iteration,
        closing: lp.is_closing(),
        items,
    }))
}

#[derive(Debug, Deserialize)]
struct ItemsQuery {
    n: Option<usize>,
}

async fn items(
    State(app): State<AppState>,
    headers: HeaderMap,
    Query(q): Query<ItemsQuery>,
) -> Result<Json<ItemsResponse>, ApiError> {
    let annotator = app.annotator(&headers)?;
    let n = q.n.unwrap_or(DEFAULT_ITEMS);
    let lp = lock(&app.0.lp);
    if lp.state().batch_ids.is_empty() {
        return Err(ApiError::new(StatusCode::CONFLICT, "no_open_batch", "no batch is open"));
    }
    if lp.is_closing() {
        return Err(ApiError::busy());
    }
    let iteration = lp.state().iteration;
    let store = lp.store();
    let items = lp
        .state()
        .batch_ids
        .iter()
        .filter(|id| store.vote(id, &annotator, iteration).is_none())
        .filter_map(|id| store.get(id))
        .take(n)
        .map(|r| Item {
            title_id: r.id.clone(),
            text: r.text.clone(),
        })
        .collect();
    Ok(Json(ItemsResponse { iteration, items }))
}

fn ack(v: &VoteRequest, status: VoteStatus, idempotent: bool, error: Option<String>) -> VoteAck {
    VoteAck {
        title_id: v.title_id.clone(),
        idempotency_key: v.idempotency_key.clone(),
        status,
        idempotent,
        error,
    }
}

fn apply_votes(app: &AppState, annotator: &str, votes: &[VoteRequest]) -> Result<VotesResponse, ApiError> {
    let mut lp = lock(&app.0.lp);
    if lp.is_closing() {
        return Err(ApiError::busy());
    }
    let mut keys = lock(&app.0.keys);
    let mut results = Vec::with_capacity(votes.len());
    for v in votes {
        if v.idempotency_key.is_empty() {
            results.push(ack(v, VoteStatus::Rejected, false, Some("empty idempotency key".into())));
            continue;
        }
        let key = (annotator.to_string(), v.idempotency_key.clone());
        if let Some((title_id, verdict)) = keys.get(&key) {
            results.push(if *title_id == v.title_id && *verdict == v.verdict {
                ack(v, VoteStatus::Ok, true, None)
            } else {
                ack(
                    v,
                    VoteStatus::Conflict,
                    false,
                    Some(format!("idempotency key already used for {title_id}")),
                )
            });
            continue;
        }
        let result = match lp.submit_vote(&v.title_id, annotator, v.verdict) {
            Ok(VoteOutcome::Recorded) => ack(v, VoteStatus::Ok, false, None),
            Ok(VoteOutcome::Duplicate) => ack(v, VoteStatus::Ok, true, None),
            Err(e @ CoreError::LabelConflict(_)) => ack(v, VoteStatus::Conflict, false, Some(e.to_string())),
            Err(e @ (CoreError::UnknownTitle(_) | CoreError::InvalidArgument(_))) => {
                ack(v, VoteStatus::Rejected, false, Some(e.to_string()))
            }
            Err(CoreError::State(_)) => return Err(ApiError::busy()),
            Err(e) => return Err(ApiError::internal("storage", e)),
        };
        if result.status == VoteStatus::Ok {
            keys.insert(key, (v.title_id.clone(), v.verdict));
        }
        results.push(result);
    }
    Ok(VotesResponse {
        iteration: lp.state().iteration,
        results,
    })
}

async fn votes(
    State(app): State<AppState>,
    headers: HeaderMap,
    Json(votes): Json<Vec<VoteRequest>>,
) -> Result<Json<VotesResponse>, ApiError> {
    let annotator = app.annotator(&headers)?;
    let worker = app.clone();
    let response = tokio::task::spawn_blocking(move || apply_votes(&worker, &annotator, &votes))
        .await
        .map_err(|e| ApiError::internal("internal", e))??;
    let n = app.0.vote_requests.fetch_add(1, Ordering::SeqCst) + 1;
    if let Some(every) = app.0.faults.drop_vote_ack_every {
        if every > 0 && n % every == 0 {
            return Err(ApiError::new(
                StatusCode::SERVICE_UNAVAILABLE,
                "ack_dropped",
                "acknowledgement dropped by fault injection",
            ));
        }
    }
    Ok(Json(response))
}

async fn close(State(app): State<AppState>, headers: HeaderMap, body: Bytes) -> Result<Json<CloseResponse>, ApiError> {
    app.authenticate(&headers)?;
    let request: CloseRequest = if body.iter().all(u8::is_ascii_whitespace) {
        CloseRequest::default()
    } else {
        serde_json::from_slice(&body)
            .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "bad_request", e.to_string()))?
    };
    // Detached so that a client hanging up cannot leave the loop stuck in
    // the closing state.
    tokio::spawn(close_and_retrain(app, request.force))
        .await
        .map_err(|e| ApiError::internal("internal", e))?
        .map(Json)
}

async fn close_and_retrain(app: AppState, force: bool) -> Result<CloseResponse, ApiError> {
    let (job, iteration) = {
        let mut lp = lock(&app.0.lp);
        if lp.is_closing() {
            return Err(ApiError::busy());
        }
        if !force {
            let progress = lp.progress();
            let missing: Vec<&String> = app
                .0
                .annotators
                .iter()
                .filter(|a| progress.votes_by_annotator.get(*a).copied().unwrap_or(0) < progress.batch_size)
                .collect();
            if !missing.is_empty() {
                return Err(ApiError::new(
                    StatusCode::CONFLICT,
                    "incomplete",
                    format!("annotators {missing:?} have not finished the batch; use force to close anyway"),
                ));
            }
        }
        let iteration = lp.state().iteration;
        let job = lp
            .prepare_close()
            .map_err(|e| ApiError::new(StatusCode::CONFLICT, "state", e.to_string()))?;
        (job, iteration)
    };

    let hook = app.0.faults.before_retrain.clone();
    let run = tokio::task::spawn_blocking(move || {
        if let Some(hook) = hook {
            hook(iteration);
        }
        job.run()
    })
    .await;
    let outcome = match run {
        Ok(Ok(outcome)) => outcome,
        Ok(Err(e)) => {
            lock(&app.0.lp).abort_close();
            return Err(ApiError::internal("retrain_failed", e));
        }
        Err(e) => {
            lock(&app.0.lp).abort_close();
            return Err(ApiError::internal("retrain_failed", format!("retrain crashed: {e}")));
        }
    };

    let mut lp = lock(&app.0.lp);
    let report = lp.commit(outcome).map_err(|e| ApiError::internal("commit_failed", e))?;
    let metrics = lp
        .state()
        .metrics_history
        .last()
        .filter(|m| m.iteration == report.closed_iteration)
        .cloned();
    Ok(CloseResponse {
        iteration: lp.state().iteration,
        report,
        metrics,
    })
}

async fn progress(State(app): State<AppState>, headers: HeaderMap) -> Result<Json<ProgressResponse>, ApiError> {
    app.authenticate(&headers)?;
    let lp = lock(&app.0.lp);
    let p = lp.progress();
    let store = lp.store();
    let iteration = p.iteration;
    let annotators = app
        .0
        .annotators
        .iter()
        .map(|a| {
            let voted = p.votes_by_annotator.get(a).copied().unwrap_or(0);
            AnnotatorProgress {
                annotator_id: a.clone(),
                voted,
                remaining: p.batch_size.saturating_sub(voted),
                complete: voted >= p.batch_size,
            }
        })
        .collect();
    let partition = store.partition();
    let counts = StoreCounts {
        records: store.len(),
        votes: store.votes().len(),
        votes_this_iteration: store.votes().iter().filter(|v| v.iteration == iteration).count(),
        labeled: partition.set(PartitionKind::Labeled).len(),
        unlabeled: partition.set(PartitionKind::Unlabeled).len(),
        validation: partition.set(PartitionKind::Validation).len(),
    };
    Ok(Json(ProgressResponse {
        iteration,
        batch_size: p.batch_size,
        titles_with_votes: p.titles_with_votes,
        resolved: p.resolved,
        closing: p.closing,
        votes_by_annotator: p.votes_by_annotator,
        annotators,
        store: counts,
    }))
}

async fn metrics_history(State(app): State<AppState>, headers: HeaderMap) -> Result<Json<MetricsHistory>, ApiError> {
    app.authenticate(&headers)?;
    let lp = lock(&app.0.lp);
    Ok(Json(MetricsHistory {
        iteration: lp.state().iteration,
        history: lp.state().metrics_history.clone(),
    }))
}
