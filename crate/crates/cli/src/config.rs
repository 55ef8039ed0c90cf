use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};
use titlebias_core::active::{ActiveConfig, ScorerConfig};
use titlebias_core::corpus::DateRange;
use titlebias_core::fixture::FixtureConfig;
use titlebias_core::lexicon::SMOOTHING_WINDOW;
use titlebias_core::terms::{Period, TermAnalysisConfig};
use titlebias_core::text_prep::PrepConfig;
use titlebias_core::trends::sha256_hex;
use titlebias_service::AnnotatorConfig;

/// Name of the config file picked up from the workdir when `--config` is
/// not given.
pub const DEFAULT_CONFIG_FILE: &str = "titlebias.toml";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceSection {
    pub listen: String,
    pub annotators: Vec<AnnotatorConfig>,
    pub operator_token: Option<String>,
}

impl Default for ServiceSection {
    fn default() -> Self {
        Self {
            listen: "127.0.0.1:8780".into(),
            annotators: Vec::new(),
            operator_token: None,
        }
    }
}

/// Everything a run depends on. Paths are relative to the workdir.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Corpus files ingested by `ingest` when no paths are given.
    pub corpus: Vec<PathBuf>,
    pub output_dir: PathBuf,
    pub date_range: DateRange,
    pub prep: PrepConfig,
    /// Scorer used by `train`, `score` and `report trends`.
    pub scorer: ScorerConfig,
    pub periods: Vec<Period>,
    /// Topic keyword files (one keyword per line); empty means the bundled
    /// foreign_issue, political_system and societal_issue lists.
    pub topic_lexicons: Vec<PathBuf>,
    /// `.dic` category lexicon; absent means the bundled demo lexicon.
    pub category_lexicon: Option<PathBuf>,
    pub smoothing_window: usize,
    pub terms: TermAnalysisConfig,
    pub active: ActiveConfig,
    pub service: ServiceSection,
    pub fixture: FixtureConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            corpus: Vec::new(),
            output_dir: PathBuf::from("out"),
            date_range: DateRange::default(),
            prep: PrepConfig::default(),
            scorer: ScorerConfig::default(),
            periods: Period::defaults(),
            topic_lexicons: Vec::new(),
            category_lexicon: None,
            smoothing_window: SMOOTHING_WINDOW,
            terms: TermAnalysisConfig::default(),
            active: ActiveConfig::default(),
            service: ServiceSection::default(),
            fixture: FixtureConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> anyhow::Result<Self> {
        Ok(toml::from_str(text)?)
    }

    /// Load `explicit` (relative to `workdir`), or the workdir's default
    /// config file if present, or the built-in defaults.
    pub fn load(workdir: &Path, explicit: Option<&Path>) -> anyhow::Result<Self> {
        let path = match explicit {
            Some(p) => Some(workdir.join(p)),
            None => Some(workdir.join(DEFAULT_CONFIG_FILE)).filter(|p| p.exists()),
        };
        let config = match path {
            Some(p) => {
                let text = std::fs::read_to_string(&p).with_context(|| format!("cannot read config {}", p.display()))?;
                Self::from_toml_str(&text).with_context(|| format!("invalid config {}", p.display()))?
            }
            None => Self::default(),
        };
        config.validate(workdir)?;
        Ok(config)
    }

    /// Referenced files must exist; periods and the smoothing window must
    /// be well formed.
    pub fn validate(&self, workdir: &Path) -> anyhow::Result<()> {
        let mut files: Vec<&PathBuf> = self.corpus.iter().chain(&self.topic_lexicons).collect();
        files.extend(&self.category_lexicon);
        files.extend(&self.prep.stopwords_path);
        files.extend(&self.prep.lemma_rules_path);
        for f in files {
            let p = workdir.join(f);
            if !p.is_file() {
                bail!("config references missing file {}", p.display());
            }
        }
        if self.periods.is_empty() {
            bail!("at least one period is required");
        }
        for p in &self.periods {
            if p.first_year > p.last_year {
                bail!("period {} ends before it starts", p.name);
            }
        }
        if self.smoothing_window == 0 || self.smoothing_window.is_multiple_of(2) {
            bail!("smoothing_window must be odd and positive");
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form of the config.
    pub fn hash(&self) -> String {
        sha256_hex(&serde_json::to_vec(self).expect("config serializes"))
    }

    /// Every seed the outputs depend on.
    pub fn seeds(&self) -> BTreeMap<String, u64> {
        BTreeMap::from([
            ("active".to_string(), self.active.seed),
            ("fixture".to_string(), self.fixture.seed),
            ("terms".to_string(), self.terms.seed),
        ])
    }
}
