//! Request and response bodies of the HTTP API, shared by server and client.

use std::collections::BTreeMap;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use titlebias_core::active::{IterationReport, MetricsPoint};
use titlebias_core::corpus::{BiasGroup, Verdict};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchItem {
    pub title_id: String,
    pub text: String,
    pub outlet: String,
    pub bias_group: BiasGroup,
    pub date: NaiveDate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchView {
    pub iteration: u32,
    pub closing: bool,
    pub items: Vec<BatchItem>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Item {
    pub title_id: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ItemsResponse {
    pub iteration: u32,
    pub items: Vec<Item>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VoteRequest {
    pub title_id: String,
    pub verdict: Verdict,
    pub idempotency_key: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VoteStatus {
    Ok,
    Rejected,
    Conflict,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VoteAck {
    pub title_id: String,
    pub idempotency_key: String,
    pub status: VoteStatus,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub idempotent: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VotesResponse {
    pub iteration: u32,
    pub results: Vec<VoteAck>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct CloseRequest {
    /// Close even if some annotators have not finished the batch.
    pub force: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CloseResponse {
    /// The iteration now open.
    pub iteration: u32,
    pub report: IterationReport,
    /// Validation metrics of the scorer retrained on the closed batch.
    pub metrics: Option<MetricsPoint>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotatorProgress {
    pub annotator_id: String,
    pub voted: usize,
    pub remaining: usize,
    pub complete: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoreCounts {
    pub records: usize,
    pub votes: usize,
    pub votes_this_iteration: usize,
    pub labeled: usize,
    pub unlabeled: usize,
    pub validation: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProgressResponse {
    pub iteration: u32,
    pub batch_size: usize,
    pub titles_with_votes: usize,
    pub resolved: usize,
    pub closing: bool,
    pub votes_by_annotator: BTreeMap<String, usize>,
    pub annotators: Vec<AnnotatorProgress>,
    pub store: StoreCounts,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsHistory {
    pub iteration: u32,
    pub history: Vec<MetricsPoint>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub kind: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorResponse {
    pub error: ErrorBody,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vote_wire_format() {
        let v: VoteRequest =
            serde_json::from_str(r#"{"title_id":"t1","verdict":"H","idempotency_key":"k1"}"#).unwrap();
        assert_eq!(v.verdict, Verdict::Hyper);
        let ack = VoteAck {
            title_id: "t1".into(),
            idempotency_key: "k1".into(),
            status: VoteStatus::Ok,
            idempotent: false,
            error: None,
        };
        assert_eq!(
            serde_json::to_string(&ack).unwrap(),
            r#"{"title_id":"t1","idempotency_key":"k1","status":"ok"}"#
        );
        let replay = VoteAck { idempotent: true, ..ack };
        assert!(serde_json::to_string(&replay).unwrap().contains(r#""status":"ok","idempotent":true"#));
    }

    #[test]
    fn close_request_body_is_optional_fields() {
        let c: CloseRequest = serde_json::from_str("{}").unwrap();
        assert!(!c.force);
    }
}
