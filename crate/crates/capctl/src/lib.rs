//! `capctl`: command-line driver for the captioning pipeline.
//!
//! Exit codes: 0 success, 1 operational failure, 2 usage or configuration
//! error.

mod commands;
pub mod config;

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("usage error: {0}")]
    Usage(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("{0}")]
    Operational(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Config(_) => 2,
            CliError::Operational(_) => 1,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "capctl", version, about = "Cross-lingual image captioning pipeline")]
pub struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Use the deterministic mock backend and hash embedder everywhere.
    #[arg(long, global = true)]
    pub offline: bool,
    /// Worker threads and per-backend in-flight bound.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Response cache directory (audit log lives inside).
    #[arg(long, global = true)]
    pub cache_dir: Option<PathBuf>,
    /// Seed for the mock backend.
    #[arg(long, global = true)]
    pub mock_seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sentence and token counts per split.
    Stats(StatsArgs),
    /// Generate and fuse English conversations (JSON lines).
    Context(StageArgs),
    /// Translate fused conversations (JSON lines).
    Translate(StageArgs),
    /// Generate target-language captions at one weight (TSV).
    Caption(CaptionArgs),
    /// Score hypothesis lines against reference lines.
    Score(ScoreArgs),
    /// Run the weight sweep and write a report.
    Sweep(SweepArgs),
    /// Lint a captions TSV.
    Validate(ValidateArgs),
}

#[derive(Debug, Args)]
pub struct CorpusArgs {
    /// Corpus TSV; defaults to the configured dataset for --lang/--split.
    #[arg(long = "in")]
    pub input: Option<PathBuf>,
    #[arg(long, default_value = "hi")]
    pub lang: String,
    #[arg(long, default_value = "train")]
    pub split: String,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    /// Corpus TSV counted as --lang/--split (default hi/train).
    #[arg(long = "in")]
    pub input: Option<PathBuf>,
    /// Only this language.
    #[arg(long)]
    pub lang: Option<String>,
    /// Only this split.
    #[arg(long)]
    pub split: Option<String>,
    /// `lang:split=path`, repeatable; adds to configured datasets.
    #[arg(long = "dataset")]
    pub datasets: Vec<String>,
    /// Tab-separated output.
    #[arg(long)]
    pub tsv: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct StageArgs {
    #[command(flatten)]
    pub corpus: CorpusArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CaptionArgs {
    #[command(flatten)]
    pub corpus: CorpusArgs,
    /// Context weight in percent; English gets the rest.
    #[arg(long, default_value_t = 50)]
    pub weight: u32,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MetricKind {
    Bleu,
    Ribes,
    Sem,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    #[arg(long, value_enum)]
    pub metric: MetricKind,
    #[arg(long)]
    pub hyp: PathBuf,
    #[arg(long = "ref")]
    pub reference: PathBuf,
    /// English sources, required for `sem`.
    #[arg(long)]
    pub src: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FormatArg {
    Tsv,
    Markdown,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub corpus: CorpusArgs,
    #[arg(long, default_value_t = 250)]
    pub subset: usize,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// `start:stop:step` or a comma list; defaults to the configured grid.
    #[arg(long)]
    pub weights: Option<String>,
    #[arg(long, value_enum, default_value = "tsv")]
    pub format: FormatArg,
    /// Add a RIBES column.
    #[arg(long)]
    pub ribes: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    /// Captions TSV as written by `capctl caption`.
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub lang: String,
    /// Corpus supplying the English captions for the length check.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Parses `args` (including the program name) and runs the command, reading
/// credentials from the process environment.
pub fn run_command<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    run_command_with_env(args, &|k| std::env::var(k).ok(), out, err)
}

pub fn run_command_with_env<I, T>(
    args: I,
    env: &dyn Fn(&str) -> Option<String>,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let text = e.render().to_string();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{text}");
                    0
                }
                _ => {
                    let _ = write!(err, "{text}");
                    2
                }
            };
        }
    };
    match commands::run(cli, env, out, err) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "capctl: {e}");
            e.exit_code()
        }
    }
}
