#![allow(dead_code)]

use std::collections::HashMap;
use std::path::Path;

use titlebias_core::active::{ActiveConfig, BatchSpec};
use titlebias_core::corpus::{CorpusStore, LabelRecord, Verdict};
use titlebias_core::fixture::{generate, FixtureConfig};
use titlebias_service::api::VoteRequest;
use titlebias_service::{AnnotatorConfig, AppState, Client, Faults, ServiceConfig};
use tokio::sync::oneshot;

pub const ANNOTATORS: [(&str, &str); 3] = [("ann-1", "tok-1"), ("ann-2", "tok-2"), ("ann-3", "tok-3")];
pub const OPERATOR: &str = "tok-op";

/// Small corpus and loop settings so a retrain takes well under a second.
pub fn setup(dir: &Path) -> (ServiceConfig, HashMap<String, bool>) {
    let fixture = generate(&FixtureConfig {
        n_titles: 1500,
        ..Default::default()
    })
    .unwrap();
    let config = ServiceConfig {
        listen: "127.0.0.1:0".into(),
        data_dir: dir.to_path_buf(),
        annotators: ANNOTATORS
            .iter()
            .map(|(id, token)| AnnotatorConfig {
                id: id.to_string(),
                token: token.to_string(),
            })
            .collect(),
        operator_token: Some(OPERATOR.into()),
        active: ActiveConfig {
            batch: BatchSpec {
                batch_size: 90,
                candidate_sample_size: 400,
                ..Default::default()
            },
            bootstrap_size: 60,
            validation_size: 60,
            ..Default::default()
        },
        ..Default::default()
    };
    let mut store = CorpusStore::open(config.store_dir(), config.date_range).unwrap();
    store.append_records(fixture.records.clone()).unwrap();
    (config, fixture.truth())
}

pub struct Server {
    pub base: String,
    pub state: AppState,
    runtime: Option<tokio::runtime::Runtime>,
    stop: Option<oneshot::Sender<()>>,
}

impl Server {
    pub fn start(config: &ServiceConfig, faults: Faults) -> Self {
        let state = AppState::open(config, faults).unwrap();
        let runtime = tokio::runtime::Runtime::new().unwrap();
        let listener = runtime.block_on(tokio::net::TcpListener::bind("127.0.0.1:0")).unwrap();
        let base = format!("http://{}", listener.local_addr().unwrap());
        let (stop, stopped) = oneshot::channel::<()>();
        runtime.spawn(titlebias_service::serve(listener, state.clone(), async {
            let _ = stopped.await;
        }));
        Self {
            base,
            state,
            runtime: Some(runtime),
            stop: Some(stop),
        }
    }

    pub fn client(&self, token: &str) -> Client {
        Client::new(self.base.clone(), token)
    }

    /// Drop the process state abruptly: in-flight work is abandoned and
    /// nothing gets a chance to clean up.
    pub fn crash(mut self) {
        self.stop.take();
        if let Some(rt) = self.runtime.take() {
            rt.shutdown_background();
        }
    }
}

impl Drop for Server {
    fn drop(&mut self) {
        if let Some(stop) = self.stop.take() {
            let _ = stop.send(());
        }
        if let Some(rt) = self.runtime.take() {
            rt.shutdown_timeout(std::time::Duration::from_secs(2));
        }
    }
}

pub fn vote(title_id: &str, hyper: bool, key: &str) -> VoteRequest {
    VoteRequest {
        title_id: title_id.to_string(),
        verdict: Verdict::from_hyper(hyper),
        idempotency_key: key.to_string(),
    }
}

pub fn stored_votes(config: &ServiceConfig) -> Vec<LabelRecord> {
    titlebias_core::corpus::read_label_file(&config.store_dir().join("votes.jsonl")).unwrap()
}
