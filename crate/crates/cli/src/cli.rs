use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use titlebias_core::corpus::{BiasGroup, IngestFormat};
use titlebias_core::learners::ScorerKind;

#[derive(Debug, Parser)]
#[command(name = "titlebias", version, about = "Hyperpartisan title detection and media-bias analysis")]
pub struct Cli {
    /// Directory every relative path is resolved against.
    #[arg(long, global = true, default_value = ".")]
    pub workdir: PathBuf,

    /// Run configuration (TOML). Defaults to titlebias.toml in the workdir
    /// when that file exists.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Upper bound on worker threads.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Validate and append titles to the corpus store.
    Ingest(IngestArgs),
    /// Write normalized tokens (and a vocabulary) for every stored title.
    Prep(PrepArgs),
    /// Fit the configured scorer on labelled titles.
    Train(TrainArgs),
    /// Predict P(hyperpartisan) for stored titles.
    Score(ScoreArgs),
    /// Compare predictions with labels.
    Evaluate(EvaluateArgs),
    /// Human-in-the-loop annotation rounds.
    #[command(subcommand)]
    Active(ActiveCommand),
    /// Term, topic and language analyses.
    #[command(subcommand)]
    Analyze(AnalyzeCommand),
    /// Figure data.
    #[command(subcommand)]
    Report(ReportCommand),
    /// Synthetic corpus with planted signal.
    #[command(subcommand)]
    Fixture(FixtureCommand),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum FormatArg {
    Jsonl,
    Csv,
}

impl From<FormatArg> for IngestFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Jsonl => IngestFormat::Jsonl,
            FormatArg::Csv => IngestFormat::Csv,
        }
    }
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// Input format; inferred from the file extension when omitted.
    #[arg(long, value_enum)]
    pub format: Option<FormatArg>,
    /// Files to ingest; defaults to the `corpus` list of the config.
    pub paths: Vec<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PrepArgs {
    /// Document-frequency threshold of the written vocabulary.
    #[arg(long, default_value_t = 0.005)]
    pub min_df: f64,
    /// Output directory (default: <output_dir>/prep).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ScorerArg {
    Logreg,
    Gbt,
    External,
}

impl From<ScorerArg> for ScorerKind {
    fn from(s: ScorerArg) -> Self {
        match s {
            ScorerArg::Logreg => ScorerKind::Logreg,
            ScorerArg::Gbt => ScorerKind::Gbt,
            ScorerArg::External => ScorerKind::External,
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Label file (JSONL with title_id and verdict "H"/"N"; several rows per
    /// title resolve by strict majority). Defaults to the consensus labels
    /// of the store's labelled partition.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// Override the configured scorer kind.
    #[arg(long, value_enum)]
    pub scorer: Option<ScorerArg>,
    /// Model artifact path (default: <output_dir>/model/scorer.json).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum PartitionArg {
    All,
    Labeled,
    Unlabeled,
    Validation,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    /// Model artifact (default: <output_dir>/model/scorer.json).
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "all")]
    pub partition: PartitionArg,
    /// Prediction file (default: <output_dir>/predictions.jsonl).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Prediction file (default: <output_dir>/predictions.jsonl).
    #[arg(long)]
    pub predictions: Option<PathBuf>,
    /// Label file; defaults to the store's consensus labels in `--partition`.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "validation")]
    pub partition: PartitionArg,
}

#[derive(Debug, Args)]
pub struct RemoteArgs {
    /// Talk to a running annotation service instead of the local loop.
    #[arg(long)]
    pub url: Option<String>,
    /// Bearer token for `--url` (defaults to the configured operator token).
    #[arg(long)]
    pub token: Option<String>,
}

#[derive(Debug, Subcommand)]
pub enum ActiveCommand {
    /// Start the annotation service.
    Serve {
        /// Override the configured listen address.
        #[arg(long)]
        listen: Option<String>,
    },
    /// Close the open batch, resolve consensus, retrain and open the next.
    Iterate {
        /// Close even if some annotators have not finished.
        #[arg(long)]
        force: bool,
        #[command(flatten)]
        remote: RemoteArgs,
    },
    /// Show the open iteration, vote counts and metrics history.
    Status {
        #[command(flatten)]
        remote: RemoteArgs,
    },
}

#[derive(Debug, Args)]
pub struct SubsetArgs {
    /// Labels selecting the analysed titles (default:
    /// <output_dir>/predictions.jsonl).
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// Analyse every title instead of only the hyperpartisan ones.
    #[arg(long)]
    pub all_titles: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum GroupArg {
    Left,
    Central,
    Right,
}

impl From<GroupArg> for BiasGroup {
    fn from(g: GroupArg) -> Self {
        match g {
            GroupArg::Left => BiasGroup::Left,
            GroupArg::Central => BiasGroup::Central,
            GroupArg::Right => BiasGroup::Right,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum AnalyzeCommand {
    /// Cross-validated L1 models and Shapley term rankings.
    Terms {
        /// Only this configured period (default: every period).
        #[arg(long)]
        period: Option<String>,
        /// Only this group (default: all groups pooled).
        #[arg(long, value_enum)]
        group: Option<GroupArg>,
        /// One analysis per group in addition to the pooled one.
        #[arg(long, conflicts_with = "group")]
        by_group: bool,
        /// Labels to fit (default: <output_dir>/predictions.jsonl).
        #[arg(long)]
        labels: Option<PathBuf>,
        /// Override the configured L1 strength.
        #[arg(long)]
        lambda: Option<f64>,
    },
    /// Topic frequency log ratios between groups with leave-one-out spread.
    Topics(SubsetArgs),
    /// Monthly lexicon profiles and their distances between groups.
    Lang(SubsetArgs),
}

#[derive(Debug, Subcommand)]
pub enum ReportCommand {
    /// Proportion, relative-change, topic and distance figure data.
    Trends {
        /// Prediction file (default: <output_dir>/predictions.jsonl).
        #[arg(long)]
        predictions: Option<PathBuf>,
        /// Output directory (default: <output_dir>/trends).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Subcommand)]
pub enum FixtureCommand {
    /// Write corpus.jsonl, labels.jsonl and fixture.json.
    Generate {
        /// Output directory.
        #[arg(long, default_value = "fixture")]
        out: PathBuf,
        #[arg(long)]
        n_titles: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
}
