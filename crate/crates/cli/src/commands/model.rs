use std::collections::BTreeMap;

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};
use titlebias_core::corpus::Verdict;
use titlebias_core::learners::{cohens_kappa, evaluate as metrics_of, Metrics, ScorerKind};

use super::{file_digest, load_labels, print_json, records_in, store_labels, Ctx, MODEL_FILE, PREDICTIONS_FILE};
use crate::cli::{EvaluateArgs, PartitionArg, ScoreArgs, TrainArgs};

pub const PREDICTIONS_MANIFEST: &str = "predictions";

/// One line of the prediction file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRow {
    pub title_id: String,
    pub prob: f64,
    pub verdict: Verdict,
}

#[derive(Serialize)]
struct TrainSummary {
    scorer_id: String,
    kind: ScorerKind,
    n_examples: usize,
    n_hyper: usize,
    skipped_unknown_titles: usize,
    artifact: Option<String>,
    training_metrics: Metrics,
}

pub fn train(ctx: &Ctx, args: &TrainArgs) -> anyhow::Result<()> {
    let store = ctx.corpus()?;
    let labels = match &args.labels {
        Some(p) => load_labels(&ctx.path(p))?,
        None => store_labels(&store, PartitionArg::Labeled),
    };
    if labels.is_empty() {
        bail!("no labelled titles to train on");
    }
    let mut examples = Vec::with_capacity(labels.len());
    let mut skipped = 0;
    for (id, &hyper) in &labels {
        match store.get(id) {
            Some(r) => examples.push((r.text.clone(), hyper)),
            None => skipped += 1,
        }
    }
    let config = match args.scorer {
        Some(kind) => ctx.config.scorer.with_kind(kind.into()),
        None => ctx.config.scorer.clone(),
    };
    let mut scorer = config.build()?;
    scorer.train(&examples).context("training failed")?;

    let texts: Vec<String> = examples.iter().map(|(t, _)| t.clone()).collect();
    let truth: Vec<bool> = examples.iter().map(|(_, h)| *h).collect();
    let pred: Vec<bool> = scorer.score(&texts)?.into_iter().map(|p| p >= 0.5).collect();

    let out = args.out.as_ref().map_or_else(|| ctx.output(MODEL_FILE), |o| ctx.path(o));
    if let Some(dir) = out.parent() {
        std::fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    }
    let saved = scorer.save_artifact(&out)?;
    print_json(&TrainSummary {
        scorer_id: scorer.id(),
        kind: scorer.handle().kind,
        n_examples: examples.len(),
        n_hyper: truth.iter().filter(|&&h| h).count(),
        skipped_unknown_titles: skipped,
        artifact: saved.then(|| out.display().to_string()),
        training_metrics: metrics_of(&pred, &truth)?,
    })
}

#[derive(Serialize)]
struct ScoreSummary {
    scorer_id: String,
    n_titles: usize,
    n_hyper: usize,
    hyper_rate: f64,
    predictions: String,
}

pub fn score(ctx: &Ctx, args: &ScoreArgs) -> anyhow::Result<()> {
    let store = ctx.corpus()?;
    let model = args.model.as_ref().map_or_else(|| ctx.output(MODEL_FILE), |m| ctx.path(m));
    let scorer = ctx
        .config
        .scorer
        .restore(Some(&model))
        .with_context(|| format!("cannot load scorer from {}", model.display()))?;
    let records = records_in(&store, args.partition);
    if records.is_empty() {
        bail!("no titles in the selected partition");
    }
    let texts: Vec<String> = records.iter().map(|r| r.text.clone()).collect();
    let probs = scorer.score(&texts)?;
    let mut bytes = Vec::new();
    let mut n_hyper = 0;
    for (r, p) in records.iter().zip(&probs) {
        let verdict = Verdict::from_hyper(*p >= 0.5);
        n_hyper += usize::from(verdict.is_hyper());
        serde_json::to_writer(
            &mut bytes,
            &PredictionRow {
                title_id: r.id.clone(),
                prob: *p,
                verdict,
            },
        )?;
        bytes.push(b'\n');
    }

    let out = args.out.as_ref().map_or_else(|| ctx.output(PREDICTIONS_FILE), |o| ctx.path(o));
    let dir = out.parent().map(|d| d.to_path_buf()).unwrap_or_else(|| ctx.workdir.clone());
    let file = out
        .file_name()
        .context("prediction path has no file name")?
        .to_string_lossy()
        .to_string();
    let mut inputs = BTreeMap::from([("corpus".to_string(), ctx.corpus_digest()?)]);
    if model.exists() {
        inputs.insert("model".into(), file_digest(&model)?);
    }
    ctx.write_artifacts(
        &dir,
        PREDICTIONS_MANIFEST,
        vec![(file, "P(hyperpartisan) and verdict per title", bytes)],
        inputs,
        Some(scorer.id()),
    )?;
    print_json(&ScoreSummary {
        scorer_id: scorer.id(),
        n_titles: records.len(),
        n_hyper,
        hyper_rate: n_hyper as f64 / records.len() as f64,
        predictions: out.display().to_string(),
    })
}

#[derive(Serialize)]
struct EvaluateSummary {
    n: usize,
    missing_predictions: usize,
    metrics: Metrics,
    kappa: f64,
}

pub fn evaluate(ctx: &Ctx, args: &EvaluateArgs) -> anyhow::Result<()> {
    let path = args
        .predictions
        .as_ref()
        .map_or_else(|| ctx.output(PREDICTIONS_FILE), |p| ctx.path(p));
    let predicted = load_labels(&path)?;
    let truth = match &args.labels {
        Some(p) => load_labels(&ctx.path(p))?,
        None => store_labels(&ctx.corpus()?, args.partition),
    };
    let mut pred = Vec::new();
    let mut gold = Vec::new();
    let mut missing = 0;
    for (id, &t) in &truth {
        match predicted.get(id) {
            Some(&p) => {
                pred.push(p);
                gold.push(t);
            }
            None => missing += 1,
        }
    }
    if gold.is_empty() {
        bail!("no labelled title has a prediction");
    }
    print_json(&EvaluateSummary {
        n: gold.len(),
        missing_predictions: missing,
        metrics: metrics_of(&pred, &gold)?,
        kappa: cohens_kappa(&pred, &gold)?,
    })
}
