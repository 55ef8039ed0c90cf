use std::collections::BTreeMap;

use anyhow::{bail, Context};
use rayon::prelude::*;
use serde::Serialize;
use titlebias_core::corpus::{IngestFormat, IngestReport};
use titlebias_core::features::Vocabulary;
use titlebias_core::fixture::{generate, FixtureConfig};
use titlebias_core::text_prep::TokenizedTitle;

use super::{print_json, Ctx};
use crate::cli::{FixtureCommand, IngestArgs, PrepArgs};

pub fn fixture(ctx: &Ctx, cmd: FixtureCommand) -> anyhow::Result<()> {
    let FixtureCommand::Generate { out, n_titles, seed } = cmd;
    let config = FixtureConfig {
        n_titles: n_titles.unwrap_or(ctx.config.fixture.n_titles),
        seed: seed.unwrap_or(ctx.config.fixture.seed),
        ..ctx.config.fixture.clone()
    };
    let fixture = generate(&config)?;
    let dir = ctx.path(&out);
    fixture.write(&dir)?;
    print_json(&fixture.summary())
}

#[derive(Serialize)]
struct FileReport {
    path: String,
    #[serde(flatten)]
    report: IngestReport,
}

#[derive(Serialize)]
struct IngestSummary {
    files: Vec<FileReport>,
    accepted: usize,
    rejected: usize,
    records: usize,
}

pub fn ingest(ctx: &Ctx, args: &IngestArgs) -> anyhow::Result<()> {
    let paths = if args.paths.is_empty() {
        ctx.config.corpus.clone()
    } else {
        args.paths.clone()
    };
    if paths.is_empty() {
        bail!("no input files: pass paths or list them under `corpus` in the config");
    }
    let mut store = ctx.open_store()?;
    let mut files = Vec::new();
    for p in paths {
        let format = match args.format {
            Some(f) => f.into(),
            None if p.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) => IngestFormat::Csv,
            None => IngestFormat::Jsonl,
        };
        let report = store
            .ingest(&ctx.path(&p), format)
            .with_context(|| format!("cannot ingest {}", p.display()))?;
        files.push(FileReport {
            path: p.display().to_string(),
            report,
        });
    }
    print_json(&IngestSummary {
        accepted: files.iter().map(|f| f.report.count).sum(),
        rejected: files.iter().map(|f| f.report.rejected.len()).sum(),
        records: store.len(),
        files,
    })
}

#[derive(Serialize)]
struct PrepSummary {
    titles: usize,
    empty_titles: usize,
    vocabulary_size: usize,
    min_df: f64,
    out_dir: String,
}

pub fn prep(ctx: &Ctx, args: &PrepArgs) -> anyhow::Result<()> {
    let store = ctx.corpus()?;
    let normalizer = ctx.normalizer()?;
    let titles: Vec<TokenizedTitle> = store
        .records()
        .par_iter()
        .map(|r| normalizer.tokenize_title(&r.id, &r.text))
        .collect();
    let docs: Vec<&Vec<String>> = titles.iter().map(|t| &t.tokens).collect();
    let docs: Vec<Vec<&str>> = docs.iter().map(|d| d.iter().map(String::as_str).collect()).collect();
    let vocab = Vocabulary::build(&docs, args.min_df)?;

    let mut tokens = Vec::new();
    for t in &titles {
        serde_json::to_writer(&mut tokens, t)?;
        tokens.push(b'\n');
    }
    let dir = args.out.as_ref().map_or_else(|| ctx.output("prep"), |o| ctx.path(o));
    let inputs = BTreeMap::from([("corpus".to_string(), ctx.corpus_digest()?)]);
    ctx.write_artifacts(
        &dir,
        "prep",
        vec![
            ("tokens.jsonl".into(), "normalized tokens per title", tokens),
            ("vocabulary.json".into(), "document-frequency filtered vocabulary", serde_json::to_vec_pretty(&vocab)?),
        ],
        inputs,
        None,
    )?;
    print_json(&PrepSummary {
        titles: titles.len(),
        empty_titles: titles.iter().filter(|t| t.tokens.is_empty()).count(),
        vocabulary_size: vocab.len(),
        min_df: args.min_df,
        out_dir: dir.display().to_string(),
    })
}
