//! HTTP annotation service for the active-learning loop.
//!
//! Annotators authenticate with bearer tokens, fetch items of the open
//! batch, and submit `H`/`N` votes with idempotency keys. Closing an
//! iteration resolves consensus and retrains the scorer off the request
//! path; a failed retrain leaves the iteration open.

pub mod api;
pub mod client;
pub mod config;
pub mod server;

pub use client::{Client, ClientError, RetryPolicy};
pub use config::{AnnotatorConfig, ServiceConfig};
pub use server::{run, serve, AppState, Faults};

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("i/o: {0}")]
    Io(String),
    #[error(transparent)]
    Core(#[from] titlebias_core::Error),
}
