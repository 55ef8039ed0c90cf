//! The human-in-the-loop labelling cycle.
//!
//! Each iteration ranks the unlabeled pool with the current scorer, offers a
//! batch to annotators (mostly the top-ranked titles of every year plus a
//! random slice), resolves their votes by strict majority and retrains on
//! everything labeled so far.
//!
//! Iteration 0 is the bootstrap: a random sample whose labels seed the first
//! scorer, together with the validation sample used to track progress.
//!
//! Closing an iteration happens in three steps so that the expensive part
//! can run without holding the loop: [`ActiveLoop::prepare_close`] snapshots
//! what is needed, [`CloseJob::run`] trains and composes the next batch, and
//! [`ActiveLoop::commit`] records the labels and swaps the state file in with
//! an atomic rename. A failure or crash before the rename leaves the previous
//! iteration in place; replaying the close is harmless because recording a
//! consensus label twice is a no-op.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::{Path, PathBuf};

use chrono::{Datelike, Utc};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{
    write_atomic, ConsensusLabel, CorpusStore, LabelRecord, PartitionKind, TitleRecord, Verdict, VoteOutcome,
};
use crate::error::{Error, Result};
use crate::features::FeatureKind;
use crate::learners::{
    evaluate, ExternalScorer, ExternalScorerConfig, Metrics, ModelParams, Scorer, ScorerHandle, ScorerKind,
    TextScorer,
};
use crate::text_prep::PrepConfig;

const STATE_FILE: &str = "state.json";

/// L1 strength of the default loop scorer.
pub const DEFAULT_LOOP_LAMBDA: f64 = 3e-4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BatchSpec {
    pub batch_size: usize,
    pub top_fraction: f64,
    /// Years whose top-ranked titles get an equal share of the batch. Empty
    /// means every year of the corpus date range.
    pub year_buckets: Vec<i32>,
    /// Pool pre-sample ranked in iteration 1.
    pub candidate_sample_size: usize,
}

impl Default for BatchSpec {
    fn default() -> Self {
        Self {
            batch_size: 500,
            top_fraction: 0.9,
            year_buckets: Vec::new(),
            candidate_sample_size: 2000,
        }
    }
}

impl BatchSpec {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch_size must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.top_fraction) {
            return Err(Error::InvalidArgument(format!("top_fraction {} outside [0, 1]", self.top_fraction)));
        }
        Ok(())
    }

    /// Number of top-ranked ids in a full batch.
    pub fn top_count(&self) -> usize {
        ((self.top_fraction * self.batch_size as f64 - 1e-9).ceil().max(0.0) as usize).min(self.batch_size)
    }
}

/// Order ids by descending probability, breaking ties by id.
pub fn rank_pool(ids: &[String], probs: &[f64]) -> Result<Vec<String>> {
    if ids.len() != probs.len() {
        return Err(Error::DimensionMismatch {
            expected: ids.len(),
            got: probs.len(),
        });
    }
    let mut order: Vec<usize> = (0..ids.len()).collect();
    order.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]).then_with(|| ids[a].cmp(&ids[b])));
    Ok(order.into_iter().map(|i| ids[i].clone()).collect())
}

/// Score `ids` with `scorer` and rank them.
pub fn rank_with_scorer(scorer: &dyn Scorer, store: &CorpusStore, ids: &[String]) -> Result<Vec<String>> {
    let texts = ids
        .iter()
        .map(|id| {
            store
                .get(id)
                .map(|r| r.text.clone())
                .ok_or_else(|| Error::UnknownTitle(id.clone()))
        })
        .collect::<Result<Vec<_>>>()?;
    rank_pool(ids, &scorer.score(&texts)?)
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComposedBatch {
    /// Top-ranked picks, grouped by year bucket in bucket order.
    pub top: Vec<String>,
    pub random: Vec<String>,
    /// Top picks per year bucket.
    pub per_year: BTreeMap<i32, usize>,
    /// Set when the pool could not fill the batch.
    pub exhausted: bool,
}

impl ComposedBatch {
    pub fn ids(&self) -> Vec<String> {
        self.top.iter().chain(&self.random).cloned().collect()
    }

    pub fn len(&self) -> usize {
        self.top.len() + self.random.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Split `total` into `buckets` equal shares, the remainder going to the
/// earliest buckets.
pub fn year_quotas(total: usize, buckets: usize) -> Vec<usize> {
    if buckets == 0 {
        return Vec::new();
    }
    let (base, rem) = (total / buckets, total % buckets);
    (0..buckets).map(|i| base + usize::from(i < rem)).collect()
}

/// Compose a batch from a ranked pool.
///
/// `year_of` maps an id to its publication year. Each year bucket receives
/// its quota of the top-ranked ids of that year; a bucket that runs short
/// passes the remainder to the other buckets in order, and whatever is still
/// missing joins the random share. Random picks are drawn uniformly (seeded)
/// from the rest of the pool.
pub fn compose_batch<F>(ranked: &[String], year_of: F, spec: &BatchSpec, seed: u64) -> Result<ComposedBatch>
where
    F: Fn(&str) -> Option<i32>,
{
    spec.validate()?;
    if ranked.is_empty() {
        return Err(Error::Empty("candidate pool"));
    }
    let years = &spec.year_buckets;
    let mut by_year: Vec<Vec<usize>> = vec![Vec::new(); years.len()];
    let slot: HashMap<i32, usize> = years.iter().enumerate().map(|(i, &y)| (y, i)).collect();
    for (pos, id) in ranked.iter().enumerate() {
        if let Some(&s) = year_of(id).and_then(|y| slot.get(&y)) {
            by_year[s].push(pos);
        }
    }

    let top_count = if years.is_empty() { 0 } else { spec.top_count() };
    let quotas = year_quotas(top_count, years.len());
    let mut taken = vec![0usize; years.len()];
    for (s, &q) in quotas.iter().enumerate() {
        taken[s] = q.min(by_year[s].len());
    }
    let mut shortfall = top_count - taken.iter().sum::<usize>();
    while shortfall > 0 {
        let mut progressed = false;
        for s in 0..years.len() {
            if shortfall > 0 && taken[s] < by_year[s].len() {
                taken[s] += 1;
                shortfall -= 1;
                progressed = true;
            }
        }
        if !progressed {
            break;
        }
    }

    let mut chosen = vec![false; ranked.len()];
    let mut batch = ComposedBatch::default();
    for (s, &year) in years.iter().enumerate() {
        for &pos in &by_year[s][..taken[s]] {
            chosen[pos] = true;
            batch.top.push(ranked[pos].clone());
        }
        batch.per_year.insert(year, taken[s]);
    }

    let rest: Vec<usize> = (0..ranked.len()).filter(|&p| !chosen[p]).collect();
    let want = spec.batch_size - batch.top.len();
    let n_random = want.min(rest.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picks: Vec<usize> = sample(&mut rng, rest.len(), n_random).into_iter().map(|i| rest[i]).collect();
    picks.sort_unstable();
    batch.random = picks.into_iter().map(|p| ranked[p].clone()).collect();
    batch.exhausted = batch.len() < spec.batch_size;
    Ok(batch)
}

/// Strict-majority verdict, or `None` when no verdict has more than half the
/// votes.
pub fn resolve_consensus(votes: &[Verdict]) -> Option<Verdict> {
    let hyper = votes.iter().filter(|v| v.is_hyper()).count();
    let non = votes.len() - hyper;
    if 2 * hyper > votes.len() {
        Some(Verdict::Hyper)
    } else if 2 * non > votes.len() {
        Some(Verdict::NonHyper)
    } else {
        None
    }
}

/// How the loop builds its scorer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScorerConfig {
    Internal {
        model: ModelParams,
        #[serde(default = "default_features")]
        features: FeatureKind,
        #[serde(default)]
        min_df: f64,
        #[serde(default)]
        prep: PrepConfig,
    },
    External(ExternalScorerConfig),
}

fn default_features() -> FeatureKind {
    FeatureKind::Binary
}

impl Default for ScorerConfig {
    fn default() -> Self {
        ScorerConfig::Internal {
            model: ModelParams::logreg(DEFAULT_LOOP_LAMBDA),
            features: FeatureKind::Binary,
            min_df: 0.0,
            prep: PrepConfig::default(),
        }
    }
}

impl ScorerConfig {
    /// The same configuration switched to `kind`. Feature and prep settings
    /// carry over between internal kinds; model parameters are kept when the
    /// kind is unchanged and reset to defaults otherwise.
    pub fn with_kind(&self, kind: ScorerKind) -> ScorerConfig {
        let (features, min_df, prep) = match (self, ScorerConfig::default()) {
            (ScorerConfig::Internal { features, min_df, prep, .. }, _) => (*features, *min_df, prep.clone()),
            (_, ScorerConfig::Internal { features, min_df, prep, .. }) => (features, min_df, prep),
            (_, ScorerConfig::External(_)) => unreachable!("default scorer is internal"),
        };
        let model = match (kind, self) {
            (ScorerKind::External, ScorerConfig::External(_)) => return self.clone(),
            (ScorerKind::External, _) => return ScorerConfig::External(ExternalScorerConfig::default()),
            (_, ScorerConfig::Internal { model, .. }) if model.kind() == kind => *model,
            (ScorerKind::Gbt, _) => ModelParams::gbt(),
            _ => ModelParams::logreg(DEFAULT_LOOP_LAMBDA),
        };
        ScorerConfig::Internal {
            model,
            features,
            min_df,
            prep,
        }
    }

    /// A fresh, untrained scorer.
    pub fn build(&self) -> Result<Box<dyn Scorer>> {
        match self {
            ScorerConfig::Internal {
                model,
                features,
                min_df,
                prep,
            } => Ok(Box::new(TextScorer::new(*model, *features, *min_df, prep.clone())?)),
            ScorerConfig::External(c) => Ok(Box::new(ExternalScorer::connect(c.clone())?)),
        }
    }

    /// A trained scorer restored from its artifact.
    pub fn restore(&self, artifact: Option<&Path>) -> Result<Box<dyn Scorer>> {
        match (self, artifact) {
            (ScorerConfig::Internal { .. }, Some(path)) => Ok(Box::new(TextScorer::load(path)?)),
            (ScorerConfig::Internal { .. }, None) => Err(Error::State("no scorer artifact to restore".into())),
            (ScorerConfig::External(c), _) => Ok(Box::new(ExternalScorer::connect(c.clone())?)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ActiveConfig {
    pub batch: BatchSpec,
    pub seed: u64,
    pub bootstrap_size: usize,
    pub validation_size: usize,
    pub scorer: ScorerConfig,
    /// Rank at most this many pool titles (sampled) after iteration 1.
    pub rerank_cap: Option<usize>,
}

impl Default for ActiveConfig {
    fn default() -> Self {
        Self {
            batch: BatchSpec::default(),
            seed: 17,
            bootstrap_size: 200,
            validation_size: 200,
            scorer: ScorerConfig::default(),
            rerank_cap: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsPoint {
    /// Iteration whose labels the scorer was trained on.
    pub iteration: u32,
    pub n_train: usize,
    pub n_validation: usize,
    pub metrics: Metrics,
}

/// The persisted state of the loop: the batch currently open for labelling
/// and everything needed to continue.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationState {
    /// 0 while the bootstrap batch is open.
    pub iteration: u32,
    pub scorer: Option<ScorerHandle>,
    /// Scorer artifact file name inside the loop directory.
    pub scorer_artifact: Option<String>,
    pub candidate_pool_ids: Vec<String>,
    pub batch_ids: Vec<String>,
    pub random_ids: Vec<String>,
    /// Bootstrap titles destined for the validation set.
    pub validation_ids: Vec<String>,
    /// Every id ever put in a batch.
    pub offered_ids: BTreeSet<String>,
    pub seed: u64,
    pub pool_exhausted: bool,
    pub metrics_history: Vec<MetricsPoint>,
}

impl IterationState {
    pub fn metrics_on_validation(&self) -> Option<&Metrics> {
        self.metrics_history.last().map(|p| &p.metrics)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_slice(&bytes)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &serde_json::to_vec_pretty(self)?)
    }
}

/// Votes received so far on the open batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Progress {
    pub iteration: u32,
    pub batch_size: usize,
    /// Titles with at least one vote.
    pub titles_with_votes: usize,
    /// Titles whose current votes already form a strict majority.
    pub resolved: usize,
    pub votes_by_annotator: BTreeMap<String, usize>,
    pub closing: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationReport {
    pub closed_iteration: u32,
    pub resolved: usize,
    pub unresolved: usize,
    pub retrained: bool,
    pub validation_metrics: Option<Metrics>,
    pub next_batch_size: usize,
    pub pool_exhausted: bool,
    pub warnings: Vec<String>,
}

/// Everything needed to close an iteration, detached from the loop.
pub struct CloseJob {
    dir: PathBuf,
    config: ActiveConfig,
    state: IterationState,
    train_labels: Vec<ConsensusLabel>,
    validation_labels: Vec<ConsensusLabel>,
    unresolved: Vec<String>,
    train_examples: Vec<(String, bool)>,
    validation_examples: Vec<(String, bool)>,
    pool: Vec<(String, String, i32)>,
    year_buckets: Vec<i32>,
}

/// Result of [`CloseJob::run`], ready to commit.
pub struct CloseOutcome {
    state: IterationState,
    train_labels: Vec<ConsensusLabel>,
    validation_labels: Vec<ConsensusLabel>,
    scorer: Box<dyn Scorer>,
    report: IterationReport,
}

impl std::fmt::Debug for CloseOutcome {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CloseOutcome").field("report", &self.report).finish()
    }
}

fn mix_seed(seed: u64, iteration: u32) -> u64 {
    // splitmix64 finalizer
    let mut z = seed ^ (u64::from(iteration) + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn sample_ids(ids: &[String], n: usize, seed: u64) -> Vec<String> {
    if n >= ids.len() {
        return ids.to_vec();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picks = sample(&mut rng, ids.len(), n).into_vec();
    picks.sort_unstable();
    picks.into_iter().map(|i| ids[i].clone()).collect()
}

impl CloseJob {
    pub fn closing_iteration(&self) -> u32 {
        self.state.iteration
    }

    /// Retrain, evaluate and compose the next batch. Touches nothing but a
    /// new scorer artifact file.
    pub fn run(self) -> Result<CloseOutcome> {
        let closing = self.state.iteration;
        let next_iteration = closing + 1;
        let mut warnings = Vec::new();
        let artifact_name = format!("scorer-{closing:04}.json");

        let (scorer, retrained, artifact): (Box<dyn Scorer>, bool, Option<String>) =
            if self.train_labels.is_empty() && self.state.scorer.is_some() {
                warnings.push(format!(
                    "iteration {closing} produced no resolved labels; scorer left unchanged"
                ));
                let prev = self.state.scorer_artifact.as_ref().map(|a| self.dir.join(a));
                (
                    self.config.scorer.restore(prev.as_deref())?,
                    false,
                    self.state.scorer_artifact.clone(),
                )
            } else {
                let mut scorer = self.config.scorer.build()?;
                scorer.train(&self.train_examples)?;
                let saved = scorer.save_artifact(&self.dir.join(&artifact_name))?;
                (scorer, true, saved.then_some(artifact_name))
            };

        let validation_metrics = if self.validation_examples.is_empty() {
            warnings.push("validation set is empty; no metrics recorded".into());
            None
        } else {
            let texts: Vec<String> = self.validation_examples.iter().map(|e| e.0.clone()).collect();
            let truth: Vec<bool> = self.validation_examples.iter().map(|e| e.1).collect();
            let pred: Vec<bool> = scorer.score(&texts)?.into_iter().map(|p| p >= 0.5).collect();
            Some(evaluate(&pred, &truth)?)
        };

        let seed = mix_seed(self.state.seed, next_iteration);
        let pool_ids: Vec<String> = self.pool.iter().map(|p| p.0.clone()).collect();
        let cap = if next_iteration == 1 {
            Some(self.config.batch.candidate_sample_size)
        } else {
            self.config.rerank_cap
        };
        let candidates = match cap {
            Some(n) => sample_ids(&pool_ids, n, seed ^ 0xC0FFEE),
            None => pool_ids,
        };
        let lookup: HashMap<&str, (&str, i32)> =
            self.pool.iter().map(|(id, text, year)| (id.as_str(), (text.as_str(), *year))).collect();

        let (ranked, batch) = if candidates.is_empty() {
            warnings.push("unlabeled pool is exhausted".into());
            (Vec::new(), ComposedBatch { exhausted: true, ..Default::default() })
        } else {
            let texts: Vec<String> = candidates.iter().map(|id| lookup[id.as_str()].0.to_string()).collect();
            let ranked = rank_pool(&candidates, &scorer.score(&texts)?)?;
            let spec = BatchSpec {
                year_buckets: self.year_buckets.clone(),
                ..self.config.batch.clone()
            };
            let batch = compose_batch(&ranked, |id| lookup.get(id).map(|v| v.1), &spec, seed)?;
            if batch.exhausted {
                warnings.push(format!("pool could only fill {} of {} batch slots", batch.len(), spec.batch_size));
            }
            (ranked, batch)
        };

        let mut state = self.state;
        let n_train = self.train_examples.len();
        if let Some(m) = validation_metrics {
            state.metrics_history.push(MetricsPoint {
                iteration: closing,
                n_train,
                n_validation: self.validation_examples.len(),
                metrics: m,
            });
        }
        state.iteration = next_iteration;
        state.scorer = Some(scorer.handle());
        state.scorer_artifact = artifact;
        state.candidate_pool_ids = ranked;
        state.batch_ids = batch.ids();
        state.random_ids = batch.random.clone();
        state.validation_ids = Vec::new();
        state.offered_ids.extend(batch.ids());
        state.pool_exhausted = batch.exhausted;

        let report = IterationReport {
            closed_iteration: closing,
            resolved: self.train_labels.len() + self.validation_labels.len(),
            unresolved: self.unresolved.len(),
            retrained,
            validation_metrics,
            next_batch_size: batch.len(),
            pool_exhausted: batch.exhausted,
            warnings,
        };
        Ok(CloseOutcome {
            state,
            train_labels: self.train_labels,
            validation_labels: self.validation_labels,
            scorer,
            report,
        })
    }
}

impl CloseOutcome {
    pub fn report(&self) -> &IterationReport {
        &self.report
    }
}

pub struct ActiveLoop {
    dir: PathBuf,
    store: CorpusStore,
    config: ActiveConfig,
    state: IterationState,
    scorer: Option<Box<dyn Scorer>>,
    closing: bool,
}

impl std::fmt::Debug for ActiveLoop {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ActiveLoop")
            .field("dir", &self.dir)
            .field("iteration", &self.state.iteration)
            .field("batch", &self.state.batch_ids.len())
            .finish()
    }
}

impl ActiveLoop {
    pub fn state_path(dir: &Path) -> PathBuf {
        dir.join(STATE_FILE)
    }

    pub fn exists(dir: &Path) -> bool {
        Self::state_path(dir).exists()
    }

    /// Start a new loop: open the bootstrap batch of validation and seed
    /// titles drawn from the unlabeled pool.
    pub fn start(store: CorpusStore, dir: impl AsRef<Path>, config: ActiveConfig) -> Result<Self> {
        let dir = dir.as_ref().to_path_buf();
        if Self::exists(&dir) {
            return Err(Error::State(format!("{} already holds a loop state", dir.display())));
        }
        config.batch.validate()?;
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let pool: Vec<String> = store.partition().set(PartitionKind::Unlabeled).iter().cloned().collect();
        let want = config.validation_size + config.bootstrap_size;
        if pool.len() < want || config.bootstrap_size < 2 {
            return Err(Error::InvalidArgument(format!(
                "bootstrap needs {want} unlabeled titles (with at least 2 for training), pool has {}",
                pool.len()
            )));
        }
        let seed = mix_seed(config.seed, 0);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let picks = sample(&mut rng, pool.len(), want).into_vec();
        let validation_ids: Vec<String> = picks[..config.validation_size].iter().map(|&i| pool[i].clone()).collect();
        let mut batch_ids: Vec<String> = picks.iter().map(|&i| pool[i].clone()).collect();
        batch_ids.sort();
        let state = IterationState {
            iteration: 0,
            scorer: None,
            scorer_artifact: None,
            candidate_pool_ids: Vec::new(),
            offered_ids: batch_ids.iter().cloned().collect(),
            random_ids: batch_ids.clone(),
            batch_ids,
            validation_ids,
            seed: config.seed,
            pool_exhausted: false,
            metrics_history: Vec::new(),
        };
        state.save(&Self::state_path(&dir))?;
        Ok(Self {
            dir,
            store,
            config,
            state,
            scorer: None,
            closing: false,
        })
    }

    /// Reopen a loop from its state file.
    pub fn open(store: CorpusStore, dir: impl AsRef<Path>, config: ActiveConfig) -> Result<Self> {
        let dir = dir.as_ref().to_path_buf();
        let state = IterationState::load(&Self::state_path(&dir))?;
        let scorer = match &state.scorer {
            Some(_) => {
                let artifact = state.scorer_artifact.as_ref().map(|a| dir.join(a));
                Some(config.scorer.restore(artifact.as_deref())?)
            }
            None => None,
        };
        Ok(Self {
            dir,
            store,
            config,
            state,
            scorer,
            closing: false,
        })
    }

    pub fn open_or_start(store: CorpusStore, dir: impl AsRef<Path>, config: ActiveConfig) -> Result<Self> {
        if Self::exists(dir.as_ref()) {
            Self::open(store, dir, config)
        } else {
            Self::start(store, dir, config)
        }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn state(&self) -> &IterationState {
        &self.state
    }

    pub fn config(&self) -> &ActiveConfig {
        &self.config
    }

    pub fn store(&self) -> &CorpusStore {
        &self.store
    }

    pub fn scorer(&self) -> Option<&dyn Scorer> {
        self.scorer.as_deref()
    }

    pub fn is_closing(&self) -> bool {
        self.closing
    }

    pub fn current_batch(&self) -> Vec<&TitleRecord> {
        self.state.batch_ids.iter().filter_map(|id| self.store.get(id)).collect()
    }

    /// Record one annotator's verdict on a title of the open batch.
    pub fn submit_vote(&mut self, title_id: &str, annotator_id: &str, verdict: Verdict) -> Result<VoteOutcome> {
        if self.closing {
            return Err(Error::State("iteration is closing; votes are not accepted".into()));
        }
        if !self.state.batch_ids.iter().any(|id| id == title_id) {
            return Err(Error::InvalidArgument(format!("{title_id} is not in the current batch")));
        }
        self.store.record_vote(LabelRecord {
            title_id: title_id.to_string(),
            annotator_id: annotator_id.to_string(),
            verdict,
            iteration: self.state.iteration,
            recorded_at: Utc::now(),
        })
    }

    pub fn progress(&self) -> Progress {
        let votes = self.store.votes_for_iteration(self.state.iteration);
        let batch: BTreeSet<&String> = self.state.batch_ids.iter().collect();
        let mut by_annotator: BTreeMap<String, usize> = BTreeMap::new();
        let mut with_votes = 0;
        let mut resolved = 0;
        for (id, vs) in &votes {
            if !batch.contains(id) {
                continue;
            }
            with_votes += 1;
            let verdicts: Vec<Verdict> = vs.iter().map(|v| v.verdict).collect();
            if resolve_consensus(&verdicts).is_some() {
                resolved += 1;
            }
            for v in vs {
                *by_annotator.entry(v.annotator_id.clone()).or_default() += 1;
            }
        }
        Progress {
            iteration: self.state.iteration,
            batch_size: self.state.batch_ids.len(),
            titles_with_votes: with_votes,
            resolved,
            votes_by_annotator: by_annotator,
            closing: self.closing,
        }
    }

    /// Snapshot the open batch for closing and stop accepting votes.
    pub fn prepare_close(&mut self) -> Result<CloseJob> {
        if self.closing {
            return Err(Error::State("iteration is already closing".into()));
        }
        let iteration = self.state.iteration;
        let votes = self.store.votes_for_iteration(iteration);
        let validation: BTreeSet<&String> = self.state.validation_ids.iter().collect();
        let mut train_labels = Vec::new();
        let mut validation_labels = Vec::new();
        let mut unresolved = Vec::new();
        for id in &self.state.batch_ids {
            let verdicts: Vec<Verdict> = votes
                .get(id)
                .map(|vs| vs.iter().map(|v| v.verdict).collect())
                .unwrap_or_default();
            match resolve_consensus(&verdicts) {
                Some(verdict) => {
                    let label = ConsensusLabel {
                        title_id: id.clone(),
                        verdict,
                        iteration,
                    };
                    if validation.contains(id) {
                        validation_labels.push(label);
                    } else {
                        train_labels.push(label);
                    }
                }
                None => unresolved.push(id.clone()),
            }
        }

        let example = |id: &String| -> Option<(String, bool)> {
            let verdict = self.store.label_of(id)?;
            Some((self.store.get(id)?.text.clone(), verdict.is_hyper()))
        };
        let text_of = |l: &ConsensusLabel| -> Result<(String, bool)> {
            let r = self.store.get(&l.title_id).ok_or_else(|| Error::UnknownTitle(l.title_id.clone()))?;
            Ok((r.text.clone(), l.verdict.is_hyper()))
        };
        let partition = self.store.partition();
        let mut train_examples: Vec<(String, bool)> =
            partition.set(PartitionKind::Labeled).iter().filter_map(example).collect();
        for l in &train_labels {
            if partition.kind_of(&l.title_id) != Some(PartitionKind::Labeled) {
                train_examples.push(text_of(l)?);
            }
        }
        let mut validation_examples: Vec<(String, bool)> =
            partition.set(PartitionKind::Validation).iter().filter_map(example).collect();
        for l in &validation_labels {
            if partition.kind_of(&l.title_id) != Some(PartitionKind::Validation) {
                validation_examples.push(text_of(l)?);
            }
        }

        let pool: Vec<(String, String, i32)> = partition
            .set(PartitionKind::Unlabeled)
            .iter()
            .filter(|id| !self.state.offered_ids.contains(*id))
            .filter_map(|id| self.store.get(id))
            .map(|r| (r.id.clone(), r.text.clone(), r.date.year()))
            .collect();
        let year_buckets = if self.config.batch.year_buckets.is_empty() {
            self.store.date_range().years().collect()
        } else {
            self.config.batch.year_buckets.clone()
        };

        self.closing = true;
        Ok(CloseJob {
            dir: self.dir.clone(),
            config: self.config.clone(),
            state: self.state.clone(),
            train_labels,
            validation_labels,
            unresolved,
            train_examples,
            validation_examples,
            pool,
            year_buckets,
        })
    }

    /// Give up on a prepared close; the open batch accepts votes again.
    pub fn abort_close(&mut self) {
        self.closing = false;
    }

    /// Record the resolved labels and switch to the next iteration.
    pub fn commit(&mut self, outcome: CloseOutcome) -> Result<IterationReport> {
        if outcome.state.iteration != self.state.iteration + 1 {
            self.closing = false;
            return Err(Error::State(format!(
                "outcome is for iteration {}, loop is at {}",
                outcome.state.iteration - 1,
                self.state.iteration
            )));
        }
        let result = self
            .store
            .record_consensus(&outcome.train_labels, PartitionKind::Labeled)
            .and_then(|_| {
                self.store
                    .record_consensus(&outcome.validation_labels, PartitionKind::Validation)
            })
            .and_then(|_| outcome.state.save(&Self::state_path(&self.dir)));
        self.closing = false;
        result?;
        self.state = outcome.state;
        self.scorer = Some(outcome.scorer);
        Ok(outcome.report)
    }

    /// Close the open iteration in one go.
    pub fn close_iteration(&mut self) -> Result<IterationReport> {
        let job = self.prepare_close()?;
        match job.run() {
            Ok(outcome) => self.commit(outcome),
            Err(e) => {
                self.abort_close();
                Err(e)
            }
        }
    }

    /// Consume the loop and hand back its store.
    pub fn into_store(self) -> CorpusStore {
        self.store
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ids(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn ranking_breaks_ties_by_id() {
        assert_eq!(rank_pool(&ids(&["c", "a", "b"]), &[0.9, 0.9, 0.1]).unwrap(), ids(&["a", "c", "b"]));
        assert!(rank_pool(&[], &[]).unwrap().is_empty());
        assert!(rank_pool(&ids(&["a"]), &[]).is_err());
    }

    fn pool(years: &[i32], per_year: usize) -> (Vec<String>, HashMap<String, i32>) {
        let mut ranked = Vec::new();
        let mut year = HashMap::new();
        for i in 0..per_year {
            for &y in years {
                let id = format!("{y}-{i:04}");
                year.insert(id.clone(), y);
                ranked.push(id);
            }
        }
        (ranked, year)
    }

    #[test]
    fn default_batch_is_450_top_and_50_random() {
        let years: Vec<i32> = (2014..=2022).collect();
        let (ranked, year) = pool(&years, 220);
        let spec = BatchSpec {
            year_buckets: years.clone(),
            ..Default::default()
        };
        let b = compose_batch(&ranked, |id| year.get(id).copied(), &spec, 1).unwrap();
        assert_eq!(b.top.len(), 450);
        assert_eq!(b.random.len(), 50);
        assert!(b.per_year.values().all(|&n| n == 50));
        assert!(!b.exhausted);
        // each year's picks are its 50 best-ranked titles
        for &y in &years {
            let want: Vec<&String> = ranked.iter().filter(|id| year[*id] == y).take(50).collect();
            let got: Vec<&String> = b.top.iter().filter(|id| year[*id] == y).collect();
            assert_eq!(got, want);
        }
        let all: BTreeSet<String> = b.ids().into_iter().collect();
        assert_eq!(all.len(), 500);
    }

    #[test]
    fn small_batch_quota_by_hand() {
        let (ranked, year) = pool(&[2014, 2015, 2016], 10);
        let spec = BatchSpec {
            batch_size: 10,
            top_fraction: 0.9,
            year_buckets: vec![2014, 2015, 2016],
            ..Default::default()
        };
        let b = compose_batch(&ranked, |id| year.get(id).copied(), &spec, 7).unwrap();
        assert_eq!(b.per_year.values().copied().collect::<Vec<_>>(), vec![3, 3, 3]);
        assert_eq!(b.random.len(), 1);
    }

    #[test]
    fn full_top_fraction_has_no_random_picks() {
        let (ranked, year) = pool(&[2014, 2015], 20);
        let spec = BatchSpec {
            batch_size: 11,
            top_fraction: 1.0,
            year_buckets: vec![2014, 2015],
            ..Default::default()
        };
        let b = compose_batch(&ranked, |id| year.get(id).copied(), &spec, 0).unwrap();
        assert!(b.random.is_empty());
        assert_eq!(b.per_year[&2014], 6);
        assert_eq!(b.per_year[&2015], 5);
    }

    #[test]
    fn short_year_passes_quota_on_and_small_pool_is_flagged() {
        let (mut ranked, mut year) = pool(&[2014, 2015, 2016], 10);
        ranked.retain(|id| !id.starts_with("2016") || id.ends_with("0000"));
        year.retain(|id, _| ranked.contains(id));
        let spec = BatchSpec {
            batch_size: 12,
            top_fraction: 1.0,
            year_buckets: vec![2014, 2015, 2016],
            ..Default::default()
        };
        let b = compose_batch(&ranked, |id| year.get(id).copied(), &spec, 0).unwrap();
        assert_eq!(b.per_year[&2016], 1);
        assert_eq!(b.top.len(), 12);

        let spec = BatchSpec { batch_size: 100, ..spec };
        let b = compose_batch(&ranked, |id| year.get(id).copied(), &spec, 0).unwrap();
        assert!(b.exhausted);
        assert_eq!(b.len(), ranked.len());
        assert!(compose_batch(&[], |_| None, &spec, 0).is_err());
    }

    #[test]
    fn consensus_is_strict_majority() {
        use Verdict::{Hyper as H, NonHyper as N};
        assert_eq!(resolve_consensus(&[H, H, N]), Some(H));
        assert_eq!(resolve_consensus(&[H, N]), None);
        assert_eq!(resolve_consensus(&[N, N, N]), Some(N));
        assert_eq!(resolve_consensus(&[]), None);
    }

    #[test]
    fn quotas_split_remainder_to_earliest() {
        assert_eq!(year_quotas(10, 3), vec![4, 3, 3]);
        assert_eq!(year_quotas(450, 9), vec![50; 9]);
        assert!(year_quotas(5, 0).is_empty());
    }

    proptest! {
        #[test]
        fn composition_counts(
            n_years in 1usize..10,
            per_year in 0usize..40,
            batch_size in 1usize..200,
            top_fraction in 0.0f64..=1.0,
            seed in any::<u64>(),
        ) {
            let years: Vec<i32> = (0..n_years as i32).map(|y| 2014 + y).collect();
            let (ranked, year) = pool(&years, per_year.max(1));
            let spec = BatchSpec { batch_size, top_fraction, year_buckets: years.clone(), ..Default::default() };
            let b = compose_batch(&ranked, |id| year.get(id).copied(), &spec, seed).unwrap();
            let unique: BTreeSet<&String> = b.top.iter().chain(&b.random).collect();
            prop_assert_eq!(unique.len(), b.len());
            prop_assert_eq!(b.len(), batch_size.min(ranked.len()));
            prop_assert_eq!(b.exhausted, ranked.len() < batch_size);
            if per_year.max(1) * n_years >= batch_size {
                let counts: Vec<usize> = b.per_year.values().copied().collect();
                let top = spec.top_count();
                if per_year.max(1) >= top.div_ceil(n_years) {
                    prop_assert_eq!(b.top.len(), top);
                    prop_assert!(counts.iter().max().unwrap() - counts.iter().min().unwrap() <= 1);
                }
            }
        }
    }
}
