//! Command-line front end: argument parsing, dispatch and error reporting.

mod commands;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

pub use commands::{audit, AuditReport, SectionStatus};

#[derive(Debug, Parser)]
#[command(
    name = "biascope",
    version,
    about = "Gender-bias diagnostics for contextual word embeddings"
)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct GlobalArgs {
    /// Seed for every random choice (splits, randomization rounds).
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads for data-parallel steps. Results do not depend on it.
    #[arg(long, global = true, default_value_t = 1)]
    pub threads: usize,
    /// Directory for outputs that are not given an explicit path.
    #[arg(long, global = true, default_value = ".")]
    pub out_dir: PathBuf,
    /// Treat any failed audit section as a fatal error.
    #[arg(long, global = true)]
    pub strict: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Count gendered pronouns and pronoun/occupation co-occurrence.
    Stats(StatsArgs),
    /// Gender-swap a whitespace-tokenized text or a CoNLL file.
    Swap(SwapArgs),
    /// Append a gender-swapped copy of every document of a CoNLL file.
    Augment(AugmentArgs),
    /// PCA of target-word differences between two aligned stores.
    Pca(PcaArgs),
    /// Train the gender probe.
    ProbeTrain(ProbeTrainArgs),
    /// Score a trained probe per gender.
    ProbeEval(ProbeEvalArgs),
    /// Average a store with its gender-swapped counterpart.
    Neutralize(NeutralizeArgs),
    /// Score pro/anti-stereotype coreference predictions.
    Eval(EvalArgs),
    /// Corpus statistics, subspace and probe in one report.
    Audit(AuditArgs),
}

#[derive(Debug, Clone, Args)]
pub struct StatsArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub lexicon: Option<PathBuf>,
    /// Split on whitespace only; keep punctuation attached.
    #[arg(long)]
    pub pretokenized: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum SwapFormat {
    Text,
    Conll,
}

#[derive(Debug, Clone, Args)]
pub struct SwapArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, value_enum, default_value_t = SwapFormat::Text)]
    pub format: SwapFormat,
    #[arg(long)]
    pub lexicon: Option<PathBuf>,
    /// Replace PERSON mentions with placeholders (CoNLL input only).
    #[arg(long)]
    pub anonymize: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct AugmentArgs {
    #[arg(long)]
    pub conll: PathBuf,
    #[arg(long)]
    pub lexicon: Option<PathBuf>,
    #[arg(long)]
    pub anonymize: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct PcaArgs {
    #[arg(long)]
    pub pairs_a: PathBuf,
    #[arg(long)]
    pub pairs_b: PathBuf,
    /// JSONL of `{"sentence_id": .., "token_index": ..}`.
    #[arg(long)]
    pub targets: PathBuf,
    /// Number of components (defaults to min(dim, 10)).
    #[arg(long)]
    pub components: Option<usize>,
    /// Fit on uncentered differences.
    #[arg(long)]
    pub no_center: bool,
    #[arg(long)]
    pub lexicon: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct ProbeOptions {
    /// Fixed nu; when absent nu is tuned over --grid.
    #[arg(long)]
    pub nu: Option<f64>,
    /// Comma-separated nu values for tuning.
    #[arg(long, value_delimiter = ',')]
    pub grid: Option<Vec<f64>>,
    /// Fraction of rows held out for the final per-gender evaluation.
    #[arg(long, default_value_t = 0.1)]
    pub test_fraction: f64,
    /// Fraction of training rows held out while tuning nu.
    #[arg(long, default_value_t = 0.2)]
    pub tune_fraction: f64,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub standardize: bool,
    #[arg(long, default_value_t = 1e-3)]
    pub kkt_tolerance: f64,
    #[arg(long, default_value_t = 10_000)]
    pub max_passes: usize,
}

#[derive(Debug, Clone, Args)]
pub struct ProbeTrainArgs {
    /// JSONL of `{"store", "sentence_id", "token_index", "gender"}`.
    #[arg(long)]
    pub dataset: PathBuf,
    #[command(flatten)]
    pub probe: ProbeOptions,
    #[arg(long)]
    pub model_out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct ProbeEvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct NeutralizeArgs {
    #[arg(long)]
    pub store: PathBuf,
    #[arg(long)]
    pub swapped_store: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum TaskArg {
    SemanticsOnly,
    SyntacticCues,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum MetricArg {
    Muc,
    B3,
    Ceafe,
    Conll,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub gold_pro: PathBuf,
    #[arg(long)]
    pub gold_anti: PathBuf,
    #[arg(long)]
    pub pred_pro: PathBuf,
    #[arg(long)]
    pub pred_anti: PathBuf,
    #[arg(long, value_enum, default_value_t = TaskArg::SemanticsOnly)]
    pub task_type: TaskArg,
    #[arg(long, value_enum, default_value_t = MetricArg::Conll)]
    pub metric: MetricArg,
    /// Randomization rounds.
    #[arg(long, default_value_t = 10_000)]
    pub rounds: usize,
    /// Name of the embedding condition for the CSV row.
    #[arg(long, default_value = "system")]
    pub label: String,
}

#[derive(Debug, Clone, Args)]
pub struct AuditArgs {
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub lexicon: Option<PathBuf>,
    #[arg(long)]
    pub pretokenized: bool,
    #[arg(long)]
    pub pairs_a: Option<PathBuf>,
    #[arg(long)]
    pub pairs_b: Option<PathBuf>,
    #[arg(long)]
    pub targets: Option<PathBuf>,
    #[arg(long)]
    pub components: Option<usize>,
    #[arg(long)]
    pub probe_dataset: Option<PathBuf>,
    #[command(flatten)]
    pub probe: ProbeOptions,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Input(String),
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    Core(biascope::Error),
    /// Audit sections failed under `--strict`.
    Strict(Vec<String>),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            _ => 1,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::Input(_) => "input",
            CliError::Io { .. } => "io",
            CliError::Core(e) => e.kind(),
            CliError::Strict(_) => "audit",
        }
    }

    pub fn message(&self) -> String {
        match self {
            CliError::Usage(m) | CliError::Input(m) => m.clone(),
            CliError::Io { path, source } => format!("{}: {source}", path.display()),
            CliError::Core(e) => e.to_string(),
            CliError::Strict(sections) => format!("failed sections: {}", sections.join(", ")),
        }
    }

    /// The single-line JSON written to stderr.
    pub fn to_json_line(&self) -> String {
        json!({"error": self.kind(), "message": self.message()}).to_string()
    }
}

impl<E: Into<biascope::Error>> From<E> for CliError {
    fn from(e: E) -> CliError {
        CliError::Core(e.into())
    }
}

/// Parses `args` (including the program name) and runs the command. Returns
/// the process exit code; errors are reported on stderr as one JSON line.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return 0;
            }
            let message = e.render().to_string();
            let first = message
                .lines()
                .next()
                .unwrap_or("usage error")
                .trim_start_matches("error: ");
            eprintln!("{}", CliError::Usage(first.to_string()).to_json_line());
            return 2;
        }
    };
    match commands::dispatch(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{}", e.to_json_line());
            e.exit_code()
        }
    }
}
