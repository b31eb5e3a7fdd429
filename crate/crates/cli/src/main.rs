mod commands;
mod config;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use sdoh_core::pipeline::Strategy;
use sdoh_core::selector::{MatchMode, Uniqueness};

/// Error category; each maps to its own exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Category {
    Usage,
    Data,
    Model,
}

impl Category {
    fn exit_code(self) -> u8 {
        match self {
            Category::Usage => 2,
            Category::Data => 3,
            Category::Model => 4,
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Category::Usage => "usage error",
            Category::Data => "data error",
            Category::Model => "model error",
        })
    }
}

#[derive(Debug)]
pub struct Failure {
    pub category: Category,
    pub error: anyhow::Error,
}

pub type CmdResult = Result<(), Failure>;

/// Tags any error with a category.
pub trait Categorize<T> {
    fn or_fail(self, category: Category, context: impl fmt::Display) -> Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> Categorize<T> for Result<T, E> {
    fn or_fail(self, category: Category, context: impl fmt::Display) -> Result<T, Failure> {
        self.map_err(|e| Failure {
            category,
            error: e.into().context(context.to_string()),
        })
    }
}

pub fn fail(category: Category, message: impl fmt::Display) -> Failure {
    Failure {
        category,
        error: anyhow::anyhow!("{message}"),
    }
}

#[derive(Debug, Parser)]
#[command(name = "sdoh", version, about = "Extract social determinants of health from clinical-style notes")]
pub struct Cli {
    /// JSON run configuration; flags override its values.
    #[arg(long, global = true, env = "SDOHX_CONFIG")]
    pub config: Option<PathBuf>,
    /// Schema JSON; the built-in schema when omitted.
    #[arg(long, global = true)]
    pub schema: Option<PathBuf>,
    /// More log output on standard error (-v info, -vv debug). RUST_LOG overrides.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Parse a brat directory and write it back as a normalized corpus with a manifest.
    Ingest(IngestArgs),
    /// Check a corpus against the schema; exits 3 on violations.
    Validate(CorpusArg),
    /// Seeded train/validation/test split written as `doc_id<TAB>split`.
    Split(SplitArgs),
    /// List notes with enough distinct keyword mentions.
    Select(SelectArgs),
    /// Generate a synthetic annotated corpus.
    Synth(SynthArgs),
    /// Train the concept tagger.
    TrainNer(TrainNerArgs),
    /// Train the attribute-to-concept linker.
    TrainRe(TrainReArgs),
    /// Run extraction over a directory of notes.
    Predict(PredictArgs),
    /// Score predictions against gold annotations.
    Score(ScoreArgs),
    /// Compare direct evaluation, fine-tuning and merged retraining on a target domain.
    Adapt(AdaptArgs),
    /// Patient-level extraction rates per category.
    Aggregate(AggregateArgs),
    /// Cohen's kappa between two annotators over per-token labels.
    Kappa(KappaArgs),
}

#[derive(Debug, Args)]
pub struct CorpusArg {
    /// Corpus directory of `.txt`/`.ann` pairs.
    #[arg(long)]
    pub corpus: PathBuf,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// Directory of brat `.txt`/`.ann` pairs, optionally with manifest.tsv.
    #[arg(long)]
    pub input: PathBuf,
    /// Output corpus directory.
    #[arg(long)]
    pub output: PathBuf,
    /// Domain tag applied to every document.
    #[arg(long)]
    pub domain: Option<String>,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    /// Corpus directory whose manifest (or `.txt` files) lists the documents.
    #[arg(long, conflicts_with = "manifest", required_unless_present = "manifest")]
    pub corpus: Option<PathBuf>,
    /// Manifest file `doc_id<TAB>patient_id<TAB>domain`.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Training fraction; the test fraction is the rest (default 0.8).
    #[arg(long)]
    pub ratio: Option<f64>,
    /// Validation fraction of the training pool (default 0.10).
    #[arg(long)]
    pub val: Option<f64>,
    /// Shuffle seed (default 7).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output file; standard output when omitted.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SelectArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    /// Keyword lexicon, one phrase per line; the bundled example when omitted.
    #[arg(long)]
    pub lexicon: Option<PathBuf>,
    /// Minimum distinct mentions (default 3).
    #[arg(long)]
    pub min_unique: Option<usize>,
    /// whole-token or substring.
    #[arg(long, default_value = "whole-token")]
    pub match_mode: MatchMode,
    /// What counts as distinct: phrase or offset.
    #[arg(long, default_value = "phrase")]
    pub uniqueness: Uniqueness,
    /// Keep a domain-stratified sample of this many selected notes.
    #[arg(long)]
    pub sample: Option<usize>,
    /// Sampling seed (default 7).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output file; standard output when omitted.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Number of documents (default 100).
    #[arg(long)]
    pub n: Option<usize>,
    /// Generation seed (default 1).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Probability of drawing each phrase from the alternate lexicon (default 0).
    #[arg(long)]
    pub shift: Option<f64>,
    /// Output corpus directory.
    #[arg(long)]
    pub output: PathBuf,
    /// Template JSON; the bundled templates when omitted.
    #[arg(long)]
    pub templates: Option<PathBuf>,
    /// Document id prefix.
    #[arg(long, default_value = "doc")]
    pub prefix: String,
    /// Consecutive documents sharing one patient id.
    #[arg(long, default_value_t = 1)]
    pub docs_per_patient: usize,
    /// Domain tag written to the manifest.
    #[arg(long, default_value = "synthetic")]
    pub domain: String,
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// Training corpus directory.
    #[arg(long, required_unless_present = "corpus")]
    pub train: Option<PathBuf>,
    /// Validation corpus directory.
    #[arg(long, required_unless_present = "corpus")]
    pub val: Option<PathBuf>,
    /// Single corpus directory, divided by --split.
    #[arg(long, requires = "split", conflicts_with_all = ["train", "val"])]
    pub corpus: Option<PathBuf>,
    /// Split file from `sdoh split`.
    #[arg(long, requires = "corpus")]
    pub split: Option<PathBuf>,
}

#[derive(Debug, Args, Clone, Default)]
pub struct TrainingArgs {
    /// Maximum epochs (default 30).
    #[arg(long)]
    pub max_epochs: Option<usize>,
    /// Epochs without validation improvement before stopping (default 5).
    #[arg(long)]
    pub patience: Option<usize>,
    /// Learning rate (default 0.5).
    #[arg(long)]
    pub learning_rate: Option<f64>,
    /// Token feature window (default 2).
    #[arg(long)]
    pub feature_window: Option<usize>,
    /// Training seed (default 13).
    #[arg(long)]
    pub train_seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct TrainNerArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub training: TrainingArgs,
    /// Output model file.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainReArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub training: TrainingArgs,
    /// Largest sentence distance between linked entities (default 1).
    #[arg(long)]
    pub max_sentence_distance: Option<usize>,
    /// Output model file.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    /// Directory of notes (`.txt`, optional manifest.tsv).
    #[arg(long)]
    pub input: PathBuf,
    /// Directory for predicted annotations, records.tsv and diagnostics.tsv.
    #[arg(long)]
    pub output: PathBuf,
    /// Tagger model file.
    #[arg(long)]
    pub ner: Option<PathBuf>,
    /// Linker model file.
    #[arg(long)]
    pub re: Option<PathBuf>,
    /// Worker threads; 0 uses every core (default 0).
    #[arg(long)]
    pub parallelism: Option<usize>,
    /// Link the input's own entities instead of tagging; needs only --re.
    #[arg(long)]
    pub link_only: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ScoreMode {
    Strict,
    Lenient,
    Both,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    /// Gold corpus directory.
    #[arg(long)]
    pub gold: PathBuf,
    /// Predicted corpus directory from `sdoh predict`.
    #[arg(long)]
    pub pred: PathBuf,
    /// Linker output over gold concepts (`predict --link-only`), adds the relation row.
    #[arg(long)]
    pub linked: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "both")]
    pub mode: ScoreMode,
    /// Also write the reports as JSON.
    #[arg(long)]
    pub json: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AdaptArgs {
    /// Source-domain tagger model.
    #[arg(long)]
    pub ner: Option<PathBuf>,
    /// Source-domain linker model.
    #[arg(long)]
    pub re: Option<PathBuf>,
    /// Source-domain training corpus (used by merged retraining).
    #[arg(long)]
    pub source: PathBuf,
    #[arg(long)]
    pub target_train: PathBuf,
    #[arg(long)]
    pub target_val: PathBuf,
    #[arg(long)]
    pub target_test: PathBuf,
    /// Run only these strategies (repeatable); all three when omitted.
    #[arg(long = "strategy")]
    pub strategies: Vec<Strategy>,
    #[command(flatten)]
    pub training: TrainingArgs,
    /// Largest sentence distance between linked entities (default 1).
    #[arg(long)]
    pub max_sentence_distance: Option<usize>,
    /// Also write the results as JSON.
    #[arg(long)]
    pub json: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AggregateArgs {
    /// records.tsv from `sdoh predict` (repeatable, one per cohort).
    #[arg(long, required = true)]
    pub records: Vec<PathBuf>,
    /// Roster per cohort: one patient id per line, or a manifest.tsv.
    #[arg(long, required = true)]
    pub roster: Vec<PathBuf>,
    /// Column name per cohort.
    #[arg(long = "name")]
    pub names: Vec<String>,
}

#[derive(Debug, Args)]
pub struct KappaArgs {
    /// First annotator's corpus directory.
    #[arg(long)]
    pub a: PathBuf,
    /// Second annotator's corpus directory over the same texts.
    #[arg(long)]
    pub b: PathBuf,
}

fn init_logging(verbose: u8) {
    let default = match verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let filter = tracing_subscriber::EnvFilter::try_from_default_env()
        .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new(default));
    tracing_subscriber::fmt()
        .with_env_filter(filter)
        .with_writer(std::io::stderr)
        .with_target(false)
        .init();
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_logging(cli.verbose);
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("{}: {:#}", f.category, f.error);
            ExitCode::from(f.category.exit_code())
        }
    }
}
