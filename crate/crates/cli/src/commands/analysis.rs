use std::collections::BTreeMap;
use std::path::PathBuf;

use anyhow::Context;
use rayon::prelude::*;
use serde::Serialize;
use titlebias_core::corpus::{BiasGroup, CorpusStore, TitleRecord};
use titlebias_core::learners::Metrics;
use titlebias_core::lexicon::{analyze_language, write_distance_csv, CategoryLexicon, TopicLanguage};
use titlebias_core::terms::{analyze_terms, render_markdown, AttributionReport, Period, TermAnalysis, TermAnalysisConfig};
use titlebias_core::text_prep::Normalizer;
use titlebias_core::topics::{
    analyze_topics, default_lexicons, write_topic_csv, AnalysisDoc, TopicLexicon, TopicRatio, DEFAULT_PAIRS,
};
use titlebias_core::trends::{
    emit_figure_data, monthly_proportion, relative_change, year_over_year_signs, yearly, FigureData, Prediction,
    RelativeChange, YearlyAggregate, BASELINE_YEAR,
};
use titlebias_core::Error as CoreError;

use super::model::PREDICTIONS_MANIFEST;
use super::{file_digest, load_labels, print_json, ArtifactManifest, Ctx, PREDICTIONS_FILE};
use crate::cli::{AnalyzeCommand, ReportCommand, SubsetArgs};

pub fn analyze(ctx: &Ctx, cmd: AnalyzeCommand) -> anyhow::Result<()> {
    match cmd {
        AnalyzeCommand::Terms {
            period,
            group,
            by_group,
            labels,
            lambda,
        } => terms(ctx, period, group.map(Into::into), by_group, labels, lambda),
        AnalyzeCommand::Topics(subset) => topics(ctx, &subset),
        AnalyzeCommand::Lang(subset) => lang(ctx, &subset),
    }
}

pub fn report(ctx: &Ctx, cmd: ReportCommand) -> anyhow::Result<()> {
    match cmd {
        ReportCommand::Trends { predictions, out } => trends(ctx, predictions, out),
    }
}

fn labels_path(ctx: &Ctx, explicit: Option<PathBuf>) -> PathBuf {
    explicit.map_or_else(|| ctx.output(PREDICTIONS_FILE), |p| ctx.path(p))
}

fn read_labels(ctx: &Ctx, explicit: Option<PathBuf>) -> anyhow::Result<(BTreeMap<String, bool>, String)> {
    let path = labels_path(ctx, explicit);
    if !path.exists() {
        anyhow::bail!("no labels at {}; run `score` first or pass --labels", path.display());
    }
    Ok((load_labels(&path)?, file_digest(&path)?))
}

fn group_name(group: Option<BiasGroup>) -> String {
    group.map_or("All".to_string(), |g| g.to_string())
}

#[derive(Serialize)]
struct TermCell {
    period: Period,
    group: String,
    analysis: TermAnalysis,
    reports: [AttributionReport; 2],
}

#[derive(Serialize)]
struct SkippedCell {
    period: String,
    group: String,
    reason: String,
}

#[derive(Serialize)]
struct TermsArtifact<'a> {
    config_hash: &'a str,
    seeds: BTreeMap<String, u64>,
    analysis_config: TermAnalysisConfig,
    cells: &'a [TermCell],
    skipped: &'a [SkippedCell],
}

#[derive(Serialize)]
struct TermCellSummary {
    period: String,
    group: String,
    n_titles: usize,
    n_hyper: usize,
    cv_metrics: Metrics,
    top_hyper: Vec<String>,
    top_non_hyper: Vec<String>,
}

fn terms(
    ctx: &Ctx,
    period: Option<String>,
    group: Option<BiasGroup>,
    by_group: bool,
    labels: Option<PathBuf>,
    lambda: Option<f64>,
) -> anyhow::Result<()> {
    let store = ctx.corpus()?;
    let (labels, labels_digest) = read_labels(ctx, labels)?;
    let periods: Vec<Period> = match &period {
        Some(name) => vec![Period::find(&ctx.config.periods, name)?.clone()],
        None => ctx.config.periods.clone(),
    };
    let groups: Vec<Option<BiasGroup>> = match (group, by_group) {
        (Some(g), _) => vec![Some(g)],
        (None, true) => std::iter::once(None).chain(BiasGroup::ALL.into_iter().map(Some)).collect(),
        (None, false) => vec![None],
    };
    let config = TermAnalysisConfig {
        lambda: lambda.unwrap_or(ctx.config.terms.lambda),
        ..ctx.config.terms
    };

    let normalizer = ctx.normalizer()?;
    let labelled: Vec<(&TitleRecord, bool)> = store
        .records()
        .iter()
        .filter_map(|r| labels.get(&r.id).map(|&h| (r, h)))
        .collect();
    let tokens: Vec<Vec<String>> = labelled.par_iter().map(|(r, _)| normalizer.normalize(&r.text)).collect();

    let mut cells = Vec::new();
    let mut skipped = Vec::new();
    for p in &periods {
        for &g in &groups {
            let rows: Vec<usize> = (0..labelled.len())
                .filter(|&i| p.contains(labelled[i].0.date) && g.is_none_or(|g| labelled[i].0.bias_group == g))
                .collect();
            let docs: Vec<&[String]> = rows.iter().map(|&i| tokens[i].as_slice()).collect();
            let docs: Vec<Vec<&str>> = docs.iter().map(|d| d.iter().map(String::as_str).collect()).collect();
            let ys: Vec<bool> = rows.iter().map(|&i| labelled[i].1).collect();
            match analyze_terms(&docs, &ys, &config) {
                Ok(analysis) => {
                    let reports = analysis.reports(p, g);
                    cells.push(TermCell {
                        period: p.clone(),
                        group: group_name(g),
                        analysis,
                        reports,
                    });
                }
                Err(e @ (CoreError::SingleClass | CoreError::Empty(_) | CoreError::InvalidArgument(_))) => {
                    skipped.push(SkippedCell {
                        period: p.name.clone(),
                        group: group_name(g),
                        reason: e.to_string(),
                    })
                }
                Err(e) => return Err(e).with_context(|| format!("term analysis of {} / {}", p.name, group_name(g))),
            }
        }
    }

    let reports: Vec<AttributionReport> = cells.iter().flat_map(|c| c.reports.clone()).collect();
    let stem = format!(
        "terms-{}-{}",
        period.as_deref().unwrap_or("all"),
        match (group, by_group) {
            (Some(g), _) => g.as_str().to_ascii_lowercase(),
            (None, true) => "by-group".into(),
            (None, false) => "pooled".into(),
        }
    );
    let artifact = TermsArtifact {
        config_hash: &ctx.config_hash,
        seeds: ctx.config.seeds(),
        analysis_config: config,
        cells: &cells,
        skipped: &skipped,
    };
    let inputs = BTreeMap::from([
        ("corpus".to_string(), ctx.corpus_digest()?),
        ("labels".to_string(), labels_digest),
    ]);
    ctx.write_artifacts(
        &ctx.output("terms"),
        &stem,
        vec![
            (format!("{stem}.json"), "per-fold models, metrics and ranked terms", serde_json::to_vec_pretty(&artifact)?),
            (format!("{stem}.md"), "ranked terms by period, group and direction", render_markdown(&reports).into_bytes()),
        ],
        inputs,
        None,
    )?;

    let top = |terms: &[titlebias_core::terms::RankedTerm]| terms.iter().take(5).map(|t| t.term.clone()).collect();
    let summary: Vec<TermCellSummary> = cells
        .iter()
        .map(|c| TermCellSummary {
            period: c.period.name.clone(),
            group: c.group.clone(),
            n_titles: c.analysis.n_titles,
            n_hyper: c.analysis.n_hyper,
            cv_metrics: c.analysis.mean_metrics,
            top_hyper: top(&c.analysis.hyper),
            top_non_hyper: top(&c.analysis.non_hyper),
        })
        .collect();
    print_json(&serde_json::json!({ "cells": summary, "skipped": skipped }))
}

fn topic_lexicons(ctx: &Ctx, normalizer: &Normalizer) -> anyhow::Result<Vec<TopicLexicon>> {
    if ctx.config.topic_lexicons.is_empty() {
        return Ok(default_lexicons(normalizer));
    }
    ctx.config
        .topic_lexicons
        .iter()
        .map(|p| TopicLexicon::load(&ctx.path(p), normalizer).map_err(Into::into))
        .collect()
}

fn category_lexicon(ctx: &Ctx) -> anyhow::Result<CategoryLexicon> {
    match &ctx.config.category_lexicon {
        Some(p) => Ok(CategoryLexicon::load(&ctx.path(p))?),
        None => Ok(CategoryLexicon::demo()),
    }
}

/// Normalized documents of the selected titles plus the input digests.
fn subset_docs(
    ctx: &Ctx,
    store: &CorpusStore,
    normalizer: &Normalizer,
    args: &SubsetArgs,
) -> anyhow::Result<(Vec<AnalysisDoc>, BTreeMap<String, String>, &'static str)> {
    let mut inputs = BTreeMap::from([("corpus".to_string(), ctx.corpus_digest()?)]);
    let records: Vec<&TitleRecord> = if args.all_titles {
        store.records().iter().collect()
    } else {
        let (labels, digest) = read_labels(ctx, args.labels.clone())?;
        inputs.insert("labels".into(), digest);
        store
            .records()
            .iter()
            .filter(|r| labels.get(&r.id).copied().unwrap_or(false))
            .collect()
    };
    anyhow::ensure!(!records.is_empty(), "no titles selected for analysis");
    let docs = records.par_iter().map(|r| AnalysisDoc::from_record(r, normalizer)).collect();
    let subset = if args.all_titles { "all" } else { "hyperpartisan" };
    Ok((docs, inputs, subset))
}

#[derive(Serialize)]
struct TopicsArtifact<'a> {
    config_hash: &'a str,
    seeds: BTreeMap<String, u64>,
    subset: &'a str,
    n_titles: usize,
    rows: &'a [TopicRatio],
}

fn topic_rows(ctx: &Ctx, docs: &[AnalysisDoc], normalizer: &Normalizer) -> anyhow::Result<Vec<TopicRatio>> {
    let lexicons = topic_lexicons(ctx, normalizer)?;
    Ok(analyze_topics(docs, &lexicons, &DEFAULT_PAIRS, &ctx.config.periods)?)
}

fn topics(ctx: &Ctx, args: &SubsetArgs) -> anyhow::Result<()> {
    let store = ctx.corpus()?;
    let normalizer = ctx.normalizer()?;
    let (docs, inputs, subset) = subset_docs(ctx, &store, &normalizer, args)?;
    let rows = topic_rows(ctx, &docs, &normalizer)?;
    let mut csv = Vec::new();
    write_topic_csv(&rows, &mut csv)?;
    let artifact = TopicsArtifact {
        config_hash: &ctx.config_hash,
        seeds: ctx.config.seeds(),
        subset,
        n_titles: docs.len(),
        rows: &rows,
    };
    let manifest = ctx.write_artifacts(
        &ctx.output("topics"),
        "topics",
        vec![
            ("topics.csv".into(), "topic log ratios with leave-one-out range", csv),
            ("topics.json".into(), "topic log ratios with every leave-one-out value", serde_json::to_vec_pretty(&artifact)?),
        ],
        inputs,
        None,
    )?;
    print_json(&manifest)
}

#[derive(Serialize)]
struct LangArtifact<'a> {
    config_hash: &'a str,
    seeds: BTreeMap<String, u64>,
    subset: &'a str,
    window: usize,
    topics: &'a [TopicLanguage],
}

fn language(ctx: &Ctx, docs: &[AnalysisDoc], normalizer: &Normalizer) -> anyhow::Result<Vec<TopicLanguage>> {
    let topics = topic_lexicons(ctx, normalizer)?;
    let lexicon = category_lexicon(ctx)?;
    Ok(analyze_language(docs, &topics, &lexicon, &DEFAULT_PAIRS, ctx.config.smoothing_window)?)
}

fn lang(ctx: &Ctx, args: &SubsetArgs) -> anyhow::Result<()> {
    let store = ctx.corpus()?;
    let normalizer = ctx.normalizer()?;
    let (docs, inputs, subset) = subset_docs(ctx, &store, &normalizer, args)?;
    let result = language(ctx, &docs, &normalizer)?;
    let series: Vec<_> = result.iter().flat_map(|t| t.series.iter().cloned()).collect();
    let mut csv = Vec::new();
    write_distance_csv(&series, &mut csv)?;
    let artifact = LangArtifact {
        config_hash: &ctx.config_hash,
        seeds: ctx.config.seeds(),
        subset,
        window: ctx.config.smoothing_window,
        topics: &result,
    };
    let manifest = ctx.write_artifacts(
        &ctx.output("lang"),
        "lang",
        vec![
            ("distances.csv".into(), "monthly profile distances, raw and smoothed", csv),
            ("lang.json".into(), "profiles and distance series per topic", serde_json::to_vec_pretty(&artifact)?),
        ],
        inputs,
        None,
    )?;
    print_json(&manifest)
}

#[derive(Serialize)]
struct SeriesSummary {
    group: String,
    yearly: Vec<YearlyAggregate>,
    relative_change: Option<RelativeChange>,
    year_over_year_signs: Vec<(i32, i8)>,
}

fn trends(ctx: &Ctx, predictions: Option<PathBuf>, out: Option<PathBuf>) -> anyhow::Result<()> {
    let store = ctx.corpus()?;
    let path = labels_path(ctx, predictions);
    let (predicted, digest) = read_labels(ctx, Some(path.clone()))?;
    let scorer_id = path
        .parent()
        .map(|d| d.join(format!("{PREDICTIONS_MANIFEST}.manifest.json")))
        .and_then(|m| std::fs::read(m).ok())
        .and_then(|b| serde_json::from_slice::<ArtifactManifest>(&b).ok())
        .and_then(|m| m.scorer_id)
        .unwrap_or_else(|| "unknown".into());

    let covered: Vec<(&TitleRecord, bool)> = store
        .records()
        .iter()
        .filter_map(|r| predicted.get(&r.id).map(|&h| (r, h)))
        .collect();
    anyhow::ensure!(!covered.is_empty(), "the predictions cover no stored title");
    let preds: Vec<Prediction> = covered
        .iter()
        .map(|(r, h)| Prediction {
            group: r.bias_group,
            date: r.date,
            hyper: *h,
        })
        .collect();
    let groups: Vec<Option<BiasGroup>> = std::iter::once(None).chain(BiasGroup::ALL.into_iter().map(Some)).collect();
    let proportions: Vec<_> = groups.iter().map(|&g| monthly_proportion(&preds, g, &scorer_id)).collect();

    let normalizer = ctx.normalizer()?;
    let docs: Vec<AnalysisDoc> = covered
        .par_iter()
        .filter(|(_, h)| *h)
        .map(|(r, _)| AnalysisDoc::from_record(r, &normalizer))
        .collect();
    let (topics, distances) = if docs.is_empty() {
        (Vec::new(), Vec::new())
    } else {
        let topics = topic_rows(ctx, &docs, &normalizer)?;
        let distances = language(ctx, &docs, &normalizer)?
            .into_iter()
            .flat_map(|t| t.series)
            .collect();
        (topics, distances)
    };

    let out_dir = out.map_or_else(|| ctx.output("trends"), |o| ctx.path(o));
    let data = FigureData {
        proportions,
        topics,
        distances,
    };
    let manifest = emit_figure_data(&data, &scorer_id, &ctx.config_hash, ctx.config.active.seed, &out_dir)?;

    let summary: Vec<SeriesSummary> = data
        .proportions
        .iter()
        .filter(|s| !s.points.is_empty())
        .map(|s| {
            let years = yearly(s);
            SeriesSummary {
                group: s.group_label().to_string(),
                year_over_year_signs: year_over_year_signs(&years),
                relative_change: relative_change(s, BASELINE_YEAR).ok(),
                yearly: years,
            }
        })
        .collect();
    let inputs = BTreeMap::from([
        ("corpus".to_string(), ctx.corpus_digest()?),
        ("predictions".to_string(), digest),
    ]);
    ctx.write_artifacts(
        &out_dir,
        "trends",
        vec![(
            "summary.json".into(),
            "yearly aggregates, relative change and year-over-year signs",
            serde_json::to_vec_pretty(&serde_json::json!({
                "config_hash": ctx.config_hash,
                "scorer_id": scorer_id,
                "uncovered_titles": store.len() - covered.len(),
                "series": summary,
            }))?,
        )],
        inputs,
        Some(scorer_id.clone()),
    )?;
    print_json(&serde_json::json!({
        "manifest": manifest,
        "uncovered_titles": store.len() - covered.len(),
        "year_over_year_signs": summary.iter().map(|s| (s.group.clone(), s.year_over_year_signs.clone())).collect::<BTreeMap<_, _>>(),
    }))
}
