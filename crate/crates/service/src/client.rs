//! Blocking HTTP client for the annotation service, with retries.

use std::time::{Duration, Instant};

use serde::de::DeserializeOwned;
use serde::Serialize;
use ureq::http::Response;
use ureq::Body;

use crate::api::{
    BatchView, CloseRequest, CloseResponse, ErrorResponse, ItemsResponse, MetricsHistory, ProgressResponse,
    VoteRequest, VotesResponse,
};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ClientError {
    #[error("transport: {0}")]
    Transport(String),
    #[error("HTTP {status} {kind}: {message}")]
    Api { status: u16, kind: String, message: String },
    #[error("undecodable response: {0}")]
    Decode(String),
}

impl ClientError {
    /// Transport failures, 5xx answers and "busy" are worth retrying.
    pub fn is_retryable(&self) -> bool {
        match self {
            ClientError::Transport(_) => true,
            ClientError::Api { status, kind, .. } => *status >= 500 || kind == "busy",
            ClientError::Decode(_) => false,
        }
    }

    pub fn kind(&self) -> Option<&str> {
        match self {
            ClientError::Api { kind, .. } => Some(kind),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    pub attempts: u32,
    pub initial_backoff: Duration,
    pub max_backoff: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            attempts: 8,
            initial_backoff: Duration::from_millis(20),
            max_backoff: Duration::from_secs(2),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Client {
    base: String,
    auth: String,
    agent: ureq::Agent,
    retry: RetryPolicy,
    retries: std::sync::Arc<std::sync::atomic::AtomicU64>,
}

impl Client {
    pub fn new(base_url: impl Into<String>, token: &str) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(Duration::from_secs(600)))
            .build()
            .into();
        Self {
            base: base_url.into().trim_end_matches('/').to_string(),
            auth: format!("Bearer {token}"),
            agent,
            retry: RetryPolicy::default(),
            retries: Default::default(),
        }
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    /// Number of attempts repeated after a retryable failure so far.
    pub fn retries(&self) -> u64 {
        self.retries.load(std::sync::atomic::Ordering::Relaxed)
    }

    fn url(&self, path: &str) -> String {
        format!("{}{path}", self.base)
    }

    fn decode<T: DeserializeOwned>(response: Result<Response<Body>, ureq::Error>) -> Result<T, ClientError> {
        let mut response = response.map_err(|e| ClientError::Transport(e.to_string()))?;
        let status = response.status().as_u16();
        if status >= 400 {
            let text = response.body_mut().read_to_string().unwrap_or_default();
            return Err(match serde_json::from_str::<ErrorResponse>(&text) {
                Ok(body) => ClientError::Api {
                    status,
                    kind: body.error.kind,
                    message: body.error.message,
                },
                Err(_) => ClientError::Api {
                    status,
                    kind: "http".into(),
                    message: text,
                },
            });
        }
        response
            .body_mut()
            .read_json()
            .map_err(|e| ClientError::Decode(e.to_string()))
    }

    fn get<T: DeserializeOwned>(&self, path: &str) -> Result<T, ClientError> {
        Self::decode(self.agent.get(self.url(path)).header("Authorization", &self.auth).call())
    }

    fn post<B: Serialize, T: DeserializeOwned>(&self, path: &str, body: &B) -> Result<T, ClientError> {
        Self::decode(
            self.agent
                .post(self.url(path))
                .header("Authorization", &self.auth)
                .send_json(body),
        )
    }

    fn retrying<T>(&self, mut call: impl FnMut() -> Result<T, ClientError>) -> Result<T, ClientError> {
        let mut backoff = self.retry.initial_backoff;
        let mut attempt = 1;
        loop {
            match call() {
                Err(e) if e.is_retryable() && attempt < self.retry.attempts => {
                    self.retries.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                    std::thread::sleep(backoff);
                    backoff = (backoff * 2).min(self.retry.max_backoff);
                    attempt += 1;
                }
                other => return other,
            }
        }
    }

    /// Poll `/health` until the service answers or `timeout` passes.
    pub fn wait_ready(&self, timeout: Duration) -> Result<(), ClientError> {
        let deadline = Instant::now() + timeout;
        loop {
            let probe = self.agent.get(self.url("/health")).call();
            match probe {
                Ok(r) if r.status().is_success() => return Ok(()),
                Ok(r) if Instant::now() >= deadline => {
                    return Err(ClientError::Transport(format!("health check answered {}", r.status())))
                }
                Err(e) if Instant::now() >= deadline => return Err(ClientError::Transport(e.to_string())),
                _ => std::thread::sleep(Duration::from_millis(20)),
            }
        }
    }

    pub fn batch(&self) -> Result<BatchView, ClientError> {
        self.retrying(|| self.get("/v1/batch/current"))
    }

    /// Up to `n` items of the open batch this annotator has not voted on.
    pub fn items(&self, n: usize) -> Result<ItemsResponse, ClientError> {
        self.retrying(|| self.get(&format!("/v1/items?n={n}")))
    }

    /// Submit votes, resending the same request (same idempotency keys)
    /// after retryable failures.
    pub fn submit_votes(&self, votes: &[VoteRequest]) -> Result<VotesResponse, ClientError> {
        self.retrying(|| self.post("/v1/votes", &votes))
    }

    /// Close the open iteration. Not retried: a second close while the
    /// first is retraining would only be answered "busy".
    pub fn close(&self, force: bool) -> Result<CloseResponse, ClientError> {
        self.post("/v1/iterations/close", &CloseRequest { force })
    }

    pub fn progress(&self) -> Result<ProgressResponse, ClientError> {
        self.retrying(|| self.get("/v1/progress"))
    }

    pub fn metrics_history(&self) -> Result<MetricsHistory, ClientError> {
        self.retrying(|| self.get("/v1/metrics/history"))
    }
}
