mod commands;
mod setup;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use lexcheck::pipeline::RunGranularity;
use lexcheck::Granularity;

/// Exit status when every requested artifact was written but some passages
/// have no verdict.
pub const EXIT_INCOMPLETE: u8 = 3;

#[derive(Parser, Debug)]
#[command(
    name = "lexcheck",
    version,
    about = "Check regulatory documents against compliance rules with LLMs"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Split documents into paragraph and sentence passages.
    Chunk(ChunkArgs),
    /// Check documents against a rule catalog and write compliance reports.
    Check(CheckArgs),
    /// Score verdicts against gold labels.
    Evaluate(EvaluateArgs),
    /// Price a usage ledger and project throughput.
    Cost(CostArgs),
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum GranularityArg {
    Sentence,
    Paragraph,
    Both,
}

impl From<GranularityArg> for RunGranularity {
    fn from(g: GranularityArg) -> Self {
        match g {
            GranularityArg::Sentence => RunGranularity::Sentence,
            GranularityArg::Paragraph => RunGranularity::Paragraph,
            GranularityArg::Both => RunGranularity::Both,
        }
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum TargetArg {
    Sentence,
    Paragraph,
}

impl From<TargetArg> for Granularity {
    fn from(t: TargetArg) -> Self {
        match t {
            TargetArg::Sentence => Granularity::Sentence,
            TargetArg::Paragraph => Granularity::Paragraph,
        }
    }
}

#[derive(Args, Debug, Clone)]
pub struct ChunkingArgs {
    /// Largest passage, in approximate tokens, sent to a model.
    #[arg(long, default_value_t = 4096)]
    pub token_limit: usize,
    /// Fail over-limit passages instead of truncating them at a sentence boundary.
    #[arg(long)]
    pub reject_over_limit: bool,
}

#[derive(Args, Debug)]
pub struct ChunkArgs {
    /// Plain-text documents.
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
    /// Write `<doc_id>.passages.jsonl` files here.
    #[arg(long, short)]
    pub output_dir: Option<PathBuf>,
    /// Print every passage, not only the counts.
    #[arg(long)]
    pub list: bool,
    #[command(flatten)]
    pub chunking: ChunkingArgs,
}

#[derive(Args, Debug, Clone)]
pub struct ProviderArgs {
    /// Provider config (TOML). Repeat to compare models in `evaluate`.
    #[arg(long = "provider-config", value_name = "PATH")]
    pub provider_configs: Vec<PathBuf>,
    /// Provider name; `mock` selects the offline fixture backend.
    #[arg(long)]
    pub provider: Option<String>,
    /// Model id, overriding the config.
    #[arg(long)]
    pub model: Option<String>,
    /// JSON-lines fixture for the mock provider.
    #[arg(long, value_name = "PATH")]
    pub mock_fixture: Option<PathBuf>,
    /// Upper bound on concurrent requests.
    #[arg(long)]
    pub max_in_flight: Option<usize>,
}

#[derive(Args, Debug, Clone)]
pub struct RunArgs {
    /// Plain-text documents.
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
    /// Rule catalog file.
    #[arg(long)]
    pub catalog: PathBuf,
    #[arg(long, value_enum, default_value = "sentence")]
    pub granularity: GranularityArg,
    /// What the paragraph-level run checks. Defaults to whole paragraphs with
    /// `--granularity paragraph` and to sentences with `--granularity both`.
    #[arg(long, value_enum)]
    pub paragraph_target: Option<TargetArg>,
    /// Sentence-level template file instead of the built-in one.
    #[arg(long, value_name = "PATH")]
    pub sentence_template: Option<PathBuf>,
    /// Paragraph-level template file instead of the built-in one.
    #[arg(long, value_name = "PATH")]
    pub paragraph_template: Option<PathBuf>,
    #[command(flatten)]
    pub provider: ProviderArgs,
    /// Rate table (TOML) used for the cost lines of reports.
    #[arg(long)]
    pub rates: Option<PathBuf>,
    #[arg(long, short)]
    pub output_dir: PathBuf,
    /// Stamp outputs with a fixed time instead of the clock.
    #[arg(long, num_args = 0..=1, default_missing_value = "1970-01-01T00:00:00Z", value_name = "RFC3339")]
    pub fixed_clock: Option<String>,
    #[command(flatten)]
    pub chunking: ChunkingArgs,
}

#[derive(Args, Debug)]
pub struct CheckArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Gold labels; when given, metrics are written next to the reports.
    #[arg(long)]
    pub gold: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    /// Plain-text documents (not needed with --predictions).
    pub inputs: Vec<PathBuf>,
    #[arg(long)]
    pub catalog: PathBuf,
    #[arg(long)]
    pub gold: PathBuf,
    /// Score an external predictions file instead of running a model.
    #[arg(long, value_name = "PATH")]
    pub predictions: Option<PathBuf>,
    /// Restrict scoring to the eval_E members of this split file.
    #[arg(long, value_name = "PATH")]
    pub splits: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "sentence")]
    pub granularity: GranularityArg,
    #[arg(long, value_enum)]
    pub paragraph_target: Option<TargetArg>,
    #[arg(long, value_name = "PATH")]
    pub sentence_template: Option<PathBuf>,
    #[arg(long, value_name = "PATH")]
    pub paragraph_template: Option<PathBuf>,
    #[command(flatten)]
    pub provider: ProviderArgs,
    #[arg(long, short)]
    pub output_dir: PathBuf,
    #[arg(long, num_args = 0..=1, default_missing_value = "1970-01-01T00:00:00Z", value_name = "RFC3339")]
    pub fixed_clock: Option<String>,
    #[command(flatten)]
    pub chunking: ChunkingArgs,
}

#[derive(Args, Debug)]
pub struct CostArgs {
    /// Usage ledger CSV written by `check` or `evaluate`.
    #[arg(long)]
    pub ledger: PathBuf,
    #[arg(long)]
    pub rates: PathBuf,
    /// Also price the whole ledger at this model's rates (`provider/model`).
    #[arg(long, value_name = "PROVIDER/MODEL")]
    pub price_as: Vec<String>,
    /// Print JSON instead of text.
    #[arg(long)]
    pub json: bool,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Chunk(a) => commands::chunk(&a),
        Command::Check(a) => commands::check(&a),
        Command::Evaluate(a) => commands::evaluate(&a),
        Command::Cost(a) => commands::cost(&a),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
