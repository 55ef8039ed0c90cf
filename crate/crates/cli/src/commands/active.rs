use anyhow::Context;
use serde::Serialize;
use titlebias_core::active::{ActiveLoop, IterationReport, MetricsPoint, Progress};
use titlebias_service::{Client, ServiceConfig};

use super::{print_json, Ctx, LOOP_DIR};
use crate::cli::{ActiveCommand, RemoteArgs};

pub fn run(ctx: &Ctx, cmd: ActiveCommand) -> anyhow::Result<()> {
    match cmd {
        ActiveCommand::Serve { listen } => serve(ctx, listen),
        ActiveCommand::Iterate { force, remote } => iterate(ctx, force, &remote),
        ActiveCommand::Status { remote } => status(ctx, &remote),
    }
}

/// The service settings of the run config, with environment overrides.
pub fn service_config(ctx: &Ctx, listen: Option<String>) -> anyhow::Result<ServiceConfig> {
    let section = &ctx.config.service;
    let mut config = ServiceConfig {
        listen: listen.unwrap_or_else(|| section.listen.clone()),
        data_dir: ctx.workdir.clone(),
        date_range: ctx.config.date_range,
        annotators: section.annotators.clone(),
        operator_token: section.operator_token.clone(),
        active: ctx.config.active.clone(),
    };
    config.apply_env(|k| std::env::var(k).ok())?;
    config.validate()?;
    Ok(config)
}

fn serve(ctx: &Ctx, listen: Option<String>) -> anyhow::Result<()> {
    let config = service_config(ctx, listen)?;
    let runtime = tokio::runtime::Runtime::new().context("cannot start the async runtime")?;
    runtime.block_on(titlebias_service::run(config))?;
    Ok(())
}

fn client(ctx: &Ctx, url: &str, remote: &RemoteArgs) -> anyhow::Result<Client> {
    let token = remote
        .token
        .clone()
        .or_else(|| ctx.config.service.operator_token.clone())
        .context("--url needs --token or a configured operator token")?;
    Ok(Client::new(url, &token))
}

fn open_loop(ctx: &Ctx) -> anyhow::Result<ActiveLoop> {
    let store = ctx.corpus()?;
    Ok(ActiveLoop::open_or_start(store, ctx.path(LOOP_DIR), ctx.config.active.clone())?)
}

/// A close was refused because the batch is not finished.
#[derive(Debug)]
pub struct Incomplete(pub String);

impl std::fmt::Display for Incomplete {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Incomplete {}

#[derive(Serialize)]
struct IterateSummary {
    iteration: u32,
    report: IterationReport,
    metrics: Option<MetricsPoint>,
}

fn iterate(ctx: &Ctx, force: bool, remote: &RemoteArgs) -> anyhow::Result<()> {
    if let Some(url) = &remote.url {
        let closed = client(ctx, url, remote)?.close(force)?;
        return print_json(&closed);
    }
    let mut lp = open_loop(ctx)?;
    if !force {
        let p = lp.progress();
        let annotators = &ctx.config.service.annotators;
        let missing: Vec<&str> = annotators
            .iter()
            .filter(|a| p.votes_by_annotator.get(&a.id).copied().unwrap_or(0) < p.batch_size)
            .map(|a| a.id.as_str())
            .collect();
        if !missing.is_empty() {
            return Err(Incomplete(format!(
                "annotators {missing:?} have not finished the batch; pass --force to close anyway"
            ))
            .into());
        }
        if annotators.is_empty() && p.resolved < p.batch_size {
            return Err(Incomplete(format!(
                "{} of {} titles have a consensus; pass --force to close anyway",
                p.resolved, p.batch_size
            ))
            .into());
        }
    }
    let report = lp.close_iteration()?;
    let metrics = lp
        .state()
        .metrics_history
        .last()
        .filter(|m| m.iteration == report.closed_iteration)
        .cloned();
    print_json(&IterateSummary {
        iteration: lp.state().iteration,
        report,
        metrics,
    })
}

#[derive(Serialize)]
struct StatusSummary {
    progress: Progress,
    pool_exhausted: bool,
    metrics_history: Vec<MetricsPoint>,
}

fn status(ctx: &Ctx, remote: &RemoteArgs) -> anyhow::Result<()> {
    if let Some(url) = &remote.url {
        let c = client(ctx, url, remote)?;
        let progress = c.progress()?;
        let history = c.metrics_history()?;
        return print_json(&serde_json::json!({ "progress": progress, "metrics_history": history.history }));
    }
    let lp = open_loop(ctx)?;
    print_json(&StatusSummary {
        progress: lp.progress(),
        pool_exhausted: lp.state().pool_exhausted,
        metrics_history: lp.state().metrics_history.clone(),
    })
}
