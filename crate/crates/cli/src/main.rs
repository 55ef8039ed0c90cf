use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::Parser;
use serde_json::json;
use titlebias_core::Error as CoreError;
use titlebias_service::{ClientError, ServiceError};

mod cli;
mod commands;
mod config;

/// Machine-readable class of a failure, written to stderr with the message.
fn kind_of(e: &anyhow::Error) -> String {
    for cause in e.chain() {
        if let Some(core) = cause.downcast_ref::<CoreError>() {
            let kind = match core {
                CoreError::Io { .. } => "io",
                CoreError::Parse { .. } | CoreError::Json(_) => "parse",
                CoreError::InvalidArgument(_) => "invalid_argument",
                CoreError::Empty(_) => "empty",
                CoreError::DimensionMismatch { .. } => "dimension_mismatch",
                CoreError::SingleClass => "single_class",
                CoreError::NonFinite { .. } => "non_finite",
                CoreError::DuplicateId(_) => "duplicate_id",
                CoreError::UnknownTitle(_) => "unknown_title",
                CoreError::LabelConflict(_) => "label_conflict",
                CoreError::Scorer(_) | CoreError::ScoringInterrupted { .. } => "scorer",
                CoreError::State(_) => "state",
            };
            return kind.into();
        }
        if let Some(service) = cause.downcast_ref::<ServiceError>() {
            let kind = match service {
                ServiceError::Config(_) => "config",
                ServiceError::Io(_) => "io",
                ServiceError::Core(_) => "service",
            };
            return kind.into();
        }
        if let Some(client) = cause.downcast_ref::<ClientError>() {
            return match client {
                ClientError::Api { kind, .. } => kind.clone(),
                ClientError::Transport(_) => "transport".into(),
                ClientError::Decode(_) => "decode".into(),
            };
        }
        if cause.downcast_ref::<commands::active::Incomplete>().is_some() {
            return "incomplete".into();
        }
        if cause.downcast_ref::<toml::de::Error>().is_some() {
            return "config".into();
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return "io".into();
        }
    }
    "error".into()
}

fn report_error(kind: &str, message: String) {
    eprintln!("{}", json!({ "error": { "kind": kind, "message": message } }));
}

fn main() -> ExitCode {
    let cli = match cli::Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            report_error("usage", e.render().to_string().trim().to_string());
            return ExitCode::from(2);
        }
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            report_error(&kind_of(&e), format!("{e:#}"));
            ExitCode::FAILURE
        }
    }
}
