//! Scorers map raw titles to P(hyperpartisan).
//!
//! [`TextScorer`] bundles text normalization, a fitted feature space and an
//! in-process model. [`ExternalScorer`] speaks a small JSON-over-HTTP
//! protocol so that any model, a fine-tuned transformer included, can fill
//! the same role:
//!
//! | request | body | response |
//! |---|---|---|
//! | `GET /health` | | `200` |
//! | `POST /score` | `{"titles": [str]}` | `{"probs": [float]}`, same length and order |
//! | `POST /train` | `{"examples": [{"text": str, "label": 0\|1}]}` | `{"status": "ok"}` |

use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{train_gbt, train_l1_logreg, Classifier, GbtModel, GbtParams, LogRegModel, LogRegOptions};
use crate::corpus::write_atomic;
use crate::error::{Error, Result};
use crate::features::{FeatureKind, FeatureSpace, FeatureVector};
use crate::text_prep::{Normalizer, PrepConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScorerKind {
    Logreg,
    Gbt,
    External,
}

impl ScorerKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ScorerKind::Logreg => "logreg",
            ScorerKind::Gbt => "gbt",
            ScorerKind::External => "external",
        }
    }
}

impl fmt::Display for ScorerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ScorerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "logreg" => Ok(ScorerKind::Logreg),
            "gbt" => Ok(ScorerKind::Gbt),
            "external" => Ok(ScorerKind::External),
            other => Err(Error::parse("scorer kind", other)),
        }
    }
}

/// Serializable reference to a scorer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScorerHandle {
    pub kind: ScorerKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
}

impl ScorerHandle {
    pub fn internal(kind: ScorerKind) -> Self {
        Self { kind, endpoint: None }
    }

    pub fn external(endpoint: impl Into<String>) -> Self {
        Self {
            kind: ScorerKind::External,
            endpoint: Some(endpoint.into()),
        }
    }
}

pub trait Scorer: Send + Sync {
    /// Stable identifier written into reports.
    fn id(&self) -> String;

    fn handle(&self) -> ScorerHandle;

    /// One probability per title, in input order.
    fn score(&self, titles: &[String]) -> Result<Vec<f64>>;

    /// Retrain from scratch on the given labelled titles.
    fn train(&mut self, examples: &[(String, bool)]) -> Result<()>;

    /// Persist the trained model to `path`. Returns false for scorers whose
    /// state lives elsewhere.
    fn save_artifact(&self, _path: &Path) -> Result<bool> {
        Ok(false)
    }
}

/// Hyperparameters of an in-process model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelParams {
    Logreg {
        lambda: f64,
        #[serde(default)]
        options: LogRegOptions,
    },
    Gbt(GbtParams),
}

impl ModelParams {
    pub fn logreg(lambda: f64) -> Self {
        ModelParams::Logreg {
            lambda,
            options: LogRegOptions::default(),
        }
    }

    pub fn gbt() -> Self {
        ModelParams::Gbt(GbtParams::default())
    }

    pub fn kind(&self) -> ScorerKind {
        match self {
            ModelParams::Logreg { .. } => ScorerKind::Logreg,
            ModelParams::Gbt(_) => ScorerKind::Gbt,
        }
    }

    pub fn fit(&self, x: &[FeatureVector], n_features: usize, y: &[bool]) -> Result<TextModel> {
        match self {
            ModelParams::Logreg { lambda, options } => {
                train_l1_logreg(x, n_features, y, *lambda, options).map(TextModel::Logreg)
            }
            ModelParams::Gbt(p) => train_gbt(x, n_features, y, p).map(TextModel::Gbt),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TextModel {
    Logreg(LogRegModel),
    Gbt(GbtModel),
}

impl Classifier for TextModel {
    fn predict_proba_one(&self, x: &FeatureVector) -> f64 {
        match self {
            TextModel::Logreg(m) => m.predict_proba_one(x),
            TextModel::Gbt(m) => m.predict_proba_one(x),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Fitted {
    space: FeatureSpace,
    model: TextModel,
}

/// Bag-of-words scorer: normalizer, feature space and model in one artifact.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TextScorer {
    pub params: ModelParams,
    pub features: FeatureKind,
    pub min_df: f64,
    pub prep: PrepConfig,
    #[serde(skip)]
    normalizer: Normalizer,
    fitted: Option<Fitted>,
}

impl TextScorer {
    pub fn new(params: ModelParams, features: FeatureKind, min_df: f64, prep: PrepConfig) -> Result<Self> {
        let normalizer = Normalizer::from_config(&prep)?;
        Ok(Self {
            params,
            features,
            min_df,
            prep,
            normalizer,
            fitted: None,
        })
    }

    /// Binary bag of words with the bundled text tables.
    pub fn with_defaults(params: ModelParams) -> Self {
        Self {
            params,
            features: FeatureKind::Binary,
            min_df: 0.0,
            prep: PrepConfig::default(),
            normalizer: Normalizer::default(),
            fitted: None,
        }
    }

    pub fn is_trained(&self) -> bool {
        self.fitted.is_some()
    }

    pub fn space(&self) -> Option<&FeatureSpace> {
        self.fitted.as_ref().map(|f| &f.space)
    }

    pub fn model(&self) -> Option<&TextModel> {
        self.fitted.as_ref().map(|f| &f.model)
    }

    pub fn normalizer(&self) -> &Normalizer {
        &self.normalizer
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &serde_json::to_vec(self)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let mut scorer: TextScorer = serde_json::from_slice(&bytes)?;
        scorer.normalizer = Normalizer::from_config(&scorer.prep)?;
        Ok(scorer)
    }
}

impl Scorer for TextScorer {
    fn id(&self) -> String {
        let features = match self.features {
            FeatureKind::Binary => "bow",
            FeatureKind::Tfidf => "tfidf",
            FeatureKind::Cooccurrence => "cooc",
        };
        format!("{}-{features}", self.params.kind())
    }

    fn handle(&self) -> ScorerHandle {
        ScorerHandle::internal(self.params.kind())
    }

    fn score(&self, titles: &[String]) -> Result<Vec<f64>> {
        let fitted = self
            .fitted
            .as_ref()
            .ok_or_else(|| Error::State("scorer has not been trained".into()))?;
        Ok(titles
            .iter()
            .map(|t| {
                let tokens = self.normalizer.normalize(t);
                fitted.model.predict_proba_one(&fitted.space.transform(&tokens))
            })
            .collect())
    }

    fn train(&mut self, examples: &[(String, bool)]) -> Result<()> {
        if examples.is_empty() {
            return Err(Error::Empty("training examples"));
        }
        let docs: Vec<Vec<String>> = examples.iter().map(|(t, _)| self.normalizer.normalize(t)).collect();
        let y: Vec<bool> = examples.iter().map(|e| e.1).collect();
        let space = FeatureSpace::fit(self.features, &docs, self.min_df)?;
        let x: Vec<FeatureVector> = docs.iter().map(|d| space.transform(d)).collect();
        let model = self.params.fit(&x, space.dim(), &y)?;
        self.fitted = Some(Fitted { space, model });
        Ok(())
    }

    fn save_artifact(&self, path: &Path) -> Result<bool> {
        self.save(path).map(|_| true)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExternalScorerConfig {
    pub endpoint: String,
    pub timeout_secs: u64,
    pub batch_size: usize,
    pub max_in_flight: usize,
}

impl Default for ExternalScorerConfig {
    fn default() -> Self {
        Self {
            endpoint: "http://127.0.0.1:8900".into(),
            timeout_secs: 60,
            batch_size: 64,
            max_in_flight: 4,
        }
    }
}

/// Probabilities for a prefix of a title list, enough to resume scoring.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ScoreCheckpoint {
    pub probs: Vec<f64>,
}

impl ScoreCheckpoint {
    pub fn completed(&self) -> usize {
        self.probs.len()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &serde_json::to_vec(self)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_slice(&bytes)?)
    }
}

#[derive(Serialize)]
struct ScoreRequest<'a> {
    titles: &'a [String],
}

#[derive(Deserialize)]
struct ScoreResponse {
    probs: Vec<f64>,
}

#[derive(Serialize)]
struct TrainExample<'a> {
    text: &'a str,
    label: u8,
}

#[derive(Serialize)]
struct TrainRequest<'a> {
    examples: Vec<TrainExample<'a>>,
}

#[derive(Deserialize)]
struct TrainResponse {
    status: String,
}

/// Client for a scorer reachable over HTTP.
#[derive(Debug, Clone)]
pub struct ExternalScorer {
    config: ExternalScorerConfig,
    agent: ureq::Agent,
}

impl ExternalScorer {
    /// Connect and check `GET /health`.
    pub fn connect(config: ExternalScorerConfig) -> Result<Self> {
        if config.batch_size == 0 || config.max_in_flight == 0 {
            return Err(Error::InvalidArgument("batch_size and max_in_flight must be positive".into()));
        }
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(config.timeout_secs.max(1))))
            .build()
            .into();
        let scorer = Self { config, agent };
        scorer.health()?;
        Ok(scorer)
    }

    pub fn config(&self) -> &ExternalScorerConfig {
        &self.config
    }

    fn url(&self, path: &str) -> String {
        format!("{}{path}", self.config.endpoint.trim_end_matches('/'))
    }

    pub fn health(&self) -> Result<()> {
        self.agent
            .get(self.url("/health"))
            .call()
            .map(|_| ())
            .map_err(|e| Error::Scorer(format!("health check at {} failed: {e}", self.config.endpoint)))
    }

    fn score_batch(&self, titles: &[String]) -> Result<Vec<f64>> {
        let mut response = self
            .agent
            .post(self.url("/score"))
            .send_json(ScoreRequest { titles })
            .map_err(|e| Error::Scorer(e.to_string()))?;
        let body: ScoreResponse = response
            .body_mut()
            .read_json()
            .map_err(|e| Error::Scorer(format!("bad /score response: {e}")))?;
        if body.probs.len() != titles.len() {
            return Err(Error::Scorer(format!(
                "/score returned {} probabilities for {} titles",
                body.probs.len(),
                titles.len()
            )));
        }
        if let Some(p) = body.probs.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::Scorer(format!("/score returned probability {p} outside [0, 1]")));
        }
        Ok(body.probs)
    }

    /// Score `titles`, skipping the prefix already held by `resume`.
    ///
    /// Up to `max_in_flight` batches run concurrently. On failure the error
    /// carries a checkpoint with every probability obtained for the longest
    /// fully scored prefix.
    pub fn score_resumable(&self, titles: &[String], resume: Option<ScoreCheckpoint>) -> Result<Vec<f64>> {
        let mut done = resume.unwrap_or_default();
        if done.completed() > titles.len() {
            return Err(Error::InvalidArgument(format!(
                "checkpoint holds {} scores but only {} titles were given",
                done.completed(),
                titles.len()
            )));
        }
        while done.completed() < titles.len() {
            let rest = &titles[done.completed()..];
            let wave: Vec<&[String]> = rest
                .chunks(self.config.batch_size)
                .take(self.config.max_in_flight)
                .collect();
            let results: Vec<Result<Vec<f64>>> = std::thread::scope(|s| {
                let handles: Vec<_> = wave.iter().map(|b| s.spawn(|| self.score_batch(b))).collect();
                handles
                    .into_iter()
                    .map(|h| h.join().unwrap_or_else(|_| Err(Error::Scorer("scoring thread panicked".into()))))
                    .collect()
            });
            for r in results {
                match r {
                    Ok(probs) => done.probs.extend(probs),
                    Err(e) => {
                        return Err(Error::ScoringInterrupted {
                            checkpoint: done,
                            total: titles.len(),
                            reason: e.to_string(),
                        })
                    }
                }
            }
        }
        Ok(done.probs)
    }
}

impl Scorer for ExternalScorer {
    fn id(&self) -> String {
        format!("external:{}", self.config.endpoint)
    }

    fn handle(&self) -> ScorerHandle {
        ScorerHandle::external(self.config.endpoint.clone())
    }

    fn score(&self, titles: &[String]) -> Result<Vec<f64>> {
        self.score_resumable(titles, None)
    }

    fn train(&mut self, examples: &[(String, bool)]) -> Result<()> {
        let request = TrainRequest {
            examples: examples
                .iter()
                .map(|(text, label)| TrainExample {
                    text,
                    label: u8::from(*label),
                })
                .collect(),
        };
        let mut response = self
            .agent
            .post(self.url("/train"))
            .send_json(request)
            .map_err(|e| Error::Scorer(e.to_string()))?;
        let body: TrainResponse = response
            .body_mut()
            .read_json()
            .map_err(|e| Error::Scorer(format!("bad /train response: {e}")))?;
        if body.status != "ok" {
            return Err(Error::Scorer(format!("/train reported status {:?}", body.status)));
        }
        Ok(())
    }
}
