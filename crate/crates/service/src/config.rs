use std::collections::HashMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use titlebias_core::active::{ActiveConfig, ScorerConfig};
use titlebias_core::corpus::DateRange;
use titlebias_core::learners::{ExternalScorerConfig, ScorerKind};

use crate::ServiceError;

pub const ENV_LISTEN: &str = "TITLEBIAS_LISTEN";
pub const ENV_DATA_DIR: &str = "TITLEBIAS_DATA_DIR";
pub const ENV_SCORER: &str = "TITLEBIAS_SCORER";
pub const ENV_SCORER_URL: &str = "TITLEBIAS_SCORER_URL";

/// One annotator and the opaque bearer token that identifies them.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotatorConfig {
    pub id: String,
    pub token: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServiceConfig {
    pub listen: String,
    /// Holds `store/` (the corpus store) and `loop/` (the loop state).
    pub data_dir: PathBuf,
    pub date_range: DateRange,
    pub annotators: Vec<AnnotatorConfig>,
    /// Token allowed to force-close a batch without voting.
    pub operator_token: Option<String>,
    pub active: ActiveConfig,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            listen: "127.0.0.1:8780".into(),
            data_dir: PathBuf::from("data"),
            date_range: DateRange::default(),
            annotators: Vec::new(),
            operator_token: None,
            active: ActiveConfig::default(),
        }
    }
}

impl ServiceConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ServiceError> {
        toml::from_str(text).map_err(|e| ServiceError::Config(e.to_string()))
    }

    /// Read a TOML file and apply environment overrides. A relative
    /// `data_dir` is resolved against the file's directory.
    pub fn load(path: &Path) -> Result<Self, ServiceError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ServiceError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut config = Self::from_toml_str(&text)?;
        if config.data_dir.is_relative() {
            if let Some(parent) = path.parent() {
                config.data_dir = parent.join(&config.data_dir);
            }
        }
        config.apply_env(|k| std::env::var(k).ok())?;
        Ok(config)
    }

    /// Override listen address, data dir, scorer kind and external scorer URL
    /// from variables looked up through `var`.
    pub fn apply_env(&mut self, var: impl Fn(&str) -> Option<String>) -> Result<(), ServiceError> {
        if let Some(listen) = var(ENV_LISTEN) {
            self.listen = listen;
        }
        if let Some(dir) = var(ENV_DATA_DIR) {
            self.data_dir = PathBuf::from(dir);
        }
        let url = var(ENV_SCORER_URL);
        let kind = match var(ENV_SCORER) {
            Some(k) => Some(k.parse::<ScorerKind>().map_err(|e| ServiceError::Config(e.to_string()))?),
            None if url.is_some() => Some(ScorerKind::External),
            None => None,
        };
        if let Some(kind) = kind {
            self.active.scorer = swap_scorer(&self.active.scorer, kind, url);
        }
        Ok(())
    }

    pub fn store_dir(&self) -> PathBuf {
        self.data_dir.join("store")
    }

    pub fn loop_dir(&self) -> PathBuf {
        self.data_dir.join("loop")
    }

    pub fn validate(&self) -> Result<(), ServiceError> {
        if self.annotators.is_empty() {
            return Err(ServiceError::Config("at least one annotator is required".into()));
        }
        let mut seen_ids = HashMap::new();
        let mut seen_tokens = HashMap::new();
        for a in &self.annotators {
            if a.id.is_empty() || a.token.is_empty() {
                return Err(ServiceError::Config("annotator id and token must be non-empty".into()));
            }
            if seen_ids.insert(a.id.as_str(), ()).is_some() {
                return Err(ServiceError::Config(format!("annotator {} listed twice", a.id)));
            }
            if seen_tokens.insert(a.token.as_str(), ()).is_some() {
                return Err(ServiceError::Config(format!("token of {} is shared", a.id)));
            }
        }
        if let Some(op) = &self.operator_token {
            if seen_tokens.contains_key(op.as_str()) {
                return Err(ServiceError::Config("operator token equals an annotator token".into()));
            }
        }
        Ok(())
    }
}

fn swap_scorer(current: &ScorerConfig, kind: ScorerKind, url: Option<String>) -> ScorerConfig {
    match (current.with_kind(kind), url) {
        (ScorerConfig::External(c), Some(endpoint)) => ScorerConfig::External(ExternalScorerConfig { endpoint, ..c }),
        (swapped, _) => swapped,
    }
}
