use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::{Deserialize, Serialize};
use titlebias_core::active::resolve_consensus;
use titlebias_core::corpus::{write_atomic, CorpusStore, PartitionKind, TitleRecord, Verdict};
use titlebias_core::text_prep::Normalizer;
use titlebias_core::trends::{sha256_hex, ManifestEntry};

use crate::cli::{Cli, Command, PartitionArg};
use crate::config::RunConfig;

pub mod active;
mod analysis;
mod data;
mod model;

/// Store directory inside the workdir.
pub const STORE_DIR: &str = "store";
/// Loop state directory inside the workdir.
pub const LOOP_DIR: &str = "loop";
pub const PREDICTIONS_FILE: &str = "predictions.jsonl";
pub const MODEL_FILE: &str = "model/scorer.json";

pub fn run(cli: Cli) -> anyhow::Result<()> {
    if let Some(jobs) = cli.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs.max(1))
            .build_global()
            .context("cannot size the worker pool")?;
    }
    let config = RunConfig::load(&cli.workdir, cli.config.as_deref())?;
    let ctx = Ctx::new(cli.workdir, config);
    match cli.command {
        Command::Ingest(args) => data::ingest(&ctx, &args),
        Command::Prep(args) => data::prep(&ctx, &args),
        Command::Train(args) => model::train(&ctx, &args),
        Command::Score(args) => model::score(&ctx, &args),
        Command::Evaluate(args) => model::evaluate(&ctx, &args),
        Command::Active(cmd) => active::run(&ctx, cmd),
        Command::Analyze(cmd) => analysis::analyze(&ctx, cmd),
        Command::Report(cmd) => analysis::report(&ctx, cmd),
        Command::Fixture(cmd) => data::fixture(&ctx, cmd),
    }
}

/// Workdir, loaded config and its hash.
pub struct Ctx {
    pub workdir: PathBuf,
    pub config: RunConfig,
    pub config_hash: String,
}

impl Ctx {
    pub fn new(workdir: PathBuf, config: RunConfig) -> Self {
        let config_hash = config.hash();
        Self {
            workdir,
            config,
            config_hash,
        }
    }

    pub fn path(&self, p: impl AsRef<Path>) -> PathBuf {
        self.workdir.join(p)
    }

    pub fn output(&self, p: impl AsRef<Path>) -> PathBuf {
        self.workdir.join(&self.config.output_dir).join(p)
    }

    pub fn open_store(&self) -> anyhow::Result<CorpusStore> {
        let dir = self.path(STORE_DIR);
        CorpusStore::open(&dir, self.config.date_range).with_context(|| format!("cannot open store {}", dir.display()))
    }

    /// The store, which must hold at least one title.
    pub fn corpus(&self) -> anyhow::Result<CorpusStore> {
        let store = self.open_store()?;
        anyhow::ensure!(!store.is_empty(), "the corpus store is empty; run `ingest` first");
        Ok(store)
    }

    pub fn normalizer(&self) -> anyhow::Result<Normalizer> {
        let mut prep = self.config.prep.clone();
        prep.stopwords_path = prep.stopwords_path.map(|p| self.path(p));
        prep.lemma_rules_path = prep.lemma_rules_path.map(|p| self.path(p));
        Ok(Normalizer::from_config(&prep)?)
    }

    /// Digest of the stored records, identifying the corpus an artifact was
    /// computed from.
    pub fn corpus_digest(&self) -> anyhow::Result<String> {
        let path = self.path(STORE_DIR).join("records.jsonl");
        file_digest(&path)
    }

    /// Write `files` into `dir` together with `<name>.manifest.json`.
    pub fn write_artifacts(
        &self,
        dir: &Path,
        name: &str,
        files: Vec<(String, &str, Vec<u8>)>,
        inputs: BTreeMap<String, String>,
        scorer_id: Option<String>,
    ) -> anyhow::Result<ArtifactManifest> {
        std::fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
        let mut entries = Vec::new();
        for (file, description, bytes) in files {
            write_atomic(&dir.join(&file), &bytes)?;
            entries.push(ManifestEntry {
                sha256: sha256_hex(&bytes),
                file,
                description: description.to_string(),
            });
        }
        let manifest = ArtifactManifest {
            command: name.to_string(),
            config_hash: self.config_hash.clone(),
            seeds: self.config.seeds(),
            scorer_id,
            inputs,
            files: entries,
        };
        write_atomic(
            &dir.join(format!("{name}.manifest.json")),
            &serde_json::to_vec_pretty(&manifest)?,
        )?;
        Ok(manifest)
    }
}

/// Index of the files one command wrote.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtifactManifest {
    pub command: String,
    pub config_hash: String,
    pub seeds: BTreeMap<String, u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scorer_id: Option<String>,
    /// Digests of the inputs (corpus, labels) the files derive from.
    pub inputs: BTreeMap<String, String>,
    pub files: Vec<ManifestEntry>,
}

pub fn file_digest(path: &Path) -> anyhow::Result<String> {
    let bytes = std::fs::read(path).with_context(|| format!("cannot read {}", path.display()))?;
    Ok(sha256_hex(&bytes))
}

pub fn print_json<T: Serialize>(value: &T) -> anyhow::Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

/// One row of a label or prediction file. Extra fields are ignored.
#[derive(Debug, Deserialize)]
struct LabelRow {
    title_id: String,
    verdict: Verdict,
}

/// Title id -> hyperpartisan, from a JSONL file of `{title_id, verdict}`
/// rows. Several rows for one title are resolved by strict majority; titles
/// without one are left out.
pub fn load_labels(path: &Path) -> anyhow::Result<BTreeMap<String, bool>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("cannot read labels {}", path.display()))?;
    let mut votes: BTreeMap<String, Vec<Verdict>> = BTreeMap::new();
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let row: LabelRow =
            serde_json::from_str(line).with_context(|| format!("{}:{}: malformed label row", path.display(), i + 1))?;
        votes.entry(row.title_id).or_default().push(row.verdict);
    }
    Ok(votes
        .into_iter()
        .filter_map(|(id, v)| resolve_consensus(&v).map(|c| (id, c.is_hyper())))
        .collect())
}

/// Consensus labels of the store, optionally restricted to one partition.
pub fn store_labels(store: &CorpusStore, partition: PartitionArg) -> BTreeMap<String, bool> {
    let kind = partition_kind(partition);
    store
        .consensus()
        .values()
        .filter(|c| kind.is_none_or(|k| store.partition().kind_of(&c.title_id) == Some(k)))
        .map(|c| (c.title_id.clone(), c.verdict.is_hyper()))
        .collect()
}

pub fn partition_kind(p: PartitionArg) -> Option<PartitionKind> {
    match p {
        PartitionArg::All => None,
        PartitionArg::Labeled => Some(PartitionKind::Labeled),
        PartitionArg::Unlabeled => Some(PartitionKind::Unlabeled),
        PartitionArg::Validation => Some(PartitionKind::Validation),
    }
}

pub fn records_in(store: &CorpusStore, partition: PartitionArg) -> Vec<&TitleRecord> {
    let kind = partition_kind(partition);
    store
        .records()
        .iter()
        .filter(|r| kind.is_none_or(|k| store.partition().set(k).contains(&r.id)))
        .collect()
}
