//! `lmsuppress`: scan a tokenizer, score its tokens, and scale the output
//! head of a checkpoint so the model rarely emits a chosen script.
//!
//! Exit codes: 0 success, 1 other failure, 2 config/usage error, 3 I/O
//! error, 4 validation error.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use lmsuppress_core::risk_scorer::{PartnerPool, Positions};
use lmsuppress_core::ErrorKind;

pub const EXIT_OTHER: u8 = 1;
pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_IO: u8 = 3;
pub const EXIT_VALIDATION: u8 = 4;

#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub kind: &'static str,
    pub message: String,
}

impl CliError {
    pub fn config(message: impl Into<String>) -> Self {
        CliError {
            code: EXIT_CONFIG,
            kind: "config",
            message: message.into(),
        }
    }

    pub fn io(message: impl Into<String>) -> Self {
        CliError {
            code: EXIT_IO,
            kind: "io",
            message: message.into(),
        }
    }
}

impl From<lmsuppress_core::Error> for CliError {
    fn from(e: lmsuppress_core::Error) -> Self {
        let (code, kind) = match e.kind() {
            ErrorKind::Config => (EXIT_CONFIG, "config"),
            ErrorKind::Io => (EXIT_IO, "io"),
            ErrorKind::Validation => (EXIT_VALIDATION, "validation"),
        };
        CliError {
            code,
            kind,
            message: e.to_string(),
        }
    }
}

#[derive(Parser, Debug)]
#[command(
    name = "lmsuppress",
    version,
    about = "Suppress a target script by scaling output-head rows"
)]
struct Cli {
    /// JSON config file; flags override its values.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Worker threads for scanning, scoring and row scaling.
    #[arg(long, global = true, env = config::ENV_THREADS)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Default, Clone)]
struct VocabArgs {
    /// Model directory (reads tokenizer.json, config.json, weights).
    #[arg(long = "model", value_name = "DIR")]
    model_dir: Option<PathBuf>,
    /// Tokenizer file, if not `<model>/tokenizer.json`.
    #[arg(long)]
    tokenizer: Option<PathBuf>,
    /// Extra special-token list (JSON array or special_tokens_map object).
    #[arg(long)]
    specials: Option<PathBuf>,
    /// Target Unicode ranges, e.g. U+4E00-U+9FFF (repeat or comma-separate).
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    ranges: Option<Vec<String>>,
}

#[derive(Args, Debug, Default, Clone)]
struct SamplingArgs {
    /// n-gram lengths to sample.
    #[arg(long, value_delimiter = ',')]
    n_values: Option<Vec<usize>>,
    /// Samples per n and position.
    #[arg(long)]
    samples_per_n: Option<usize>,
    #[arg(long, env = config::ENV_SEED)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    partner_pool: Option<PoolArg>,
    #[arg(long, value_enum)]
    positions: Option<PositionsArg>,
}

#[derive(Args, Debug, Default, Clone)]
struct SmoothingArgs {
    /// Floor of the scale factor, in (0, 1].
    #[arg(long)]
    min_scale: Option<f64>,
    /// Steepness of the curve, > 0.
    #[arg(long)]
    smoothness: Option<f64>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum PoolArg {
    BrokenOnly,
    BrokenAndTarget,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum PositionsArg {
    All,
    FirstOnly,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ReductionArg {
    RowNorm,
    Raw,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum RuleArg {
    Any,
    Ratio,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Classify every vocabulary token and print a summary.
    Scan {
        #[command(flatten)]
        vocab: VocabArgs,
        /// Write the full per-token dump here.
        #[arg(long, value_name = "FILE")]
        json_records: Option<PathBuf>,
        /// Write the summary report here instead of stdout.
        #[arg(long, value_name = "FILE")]
        report: Option<PathBuf>,
    },
    /// Build the per-token risk table.
    Score {
        #[command(flatten)]
        vocab: VocabArgs,
        #[command(flatten)]
        sampling: SamplingArgs,
        /// Risk table JSON output.
        #[arg(long = "out", value_name = "FILE")]
        risk_table: Option<PathBuf>,
        /// Compact binary scores output.
        #[arg(long, value_name = "FILE")]
        binary: Option<PathBuf>,
        #[arg(long, value_name = "FILE")]
        report: Option<PathBuf>,
    },
    /// Scan, score, plan and apply the head edit.
    Smooth {
        #[command(flatten)]
        vocab: VocabArgs,
        #[command(flatten)]
        sampling: SamplingArgs,
        #[command(flatten)]
        smoothing: SmoothingArgs,
        /// Output checkpoint directory.
        #[arg(long = "output", value_name = "DIR")]
        output_dir: Option<PathBuf>,
        /// Reuse a saved risk table instead of scoring.
        #[arg(long, value_name = "FILE")]
        risk_table: Option<PathBuf>,
        /// Save the computed risk table here.
        #[arg(long, value_name = "FILE")]
        save_risk_table: Option<PathBuf>,
        /// Compute the report without writing anything.
        #[arg(long)]
        dry_run: bool,
        /// Materialize a separate head when embeddings are tied.
        #[arg(long)]
        allow_untie: bool,
        /// Edit an already edited checkpoint or write into a non-empty directory.
        #[arg(long)]
        force: bool,
        /// Hard-link unchanged files instead of copying.
        #[arg(long)]
        hard_link: bool,
        #[arg(long, value_name = "FILE")]
        report: Option<PathBuf>,
    },
    /// Print the risk-to-scale curve as CSV.
    Curve {
        #[command(flatten)]
        smoothing: SmoothingArgs,
        #[arg(long, default_value_t = 101)]
        steps: usize,
        #[arg(long = "out", value_name = "FILE")]
        out: Option<PathBuf>,
    },
    /// Export head rows of one or two checkpoints as CSV.
    Slice {
        /// Original checkpoint.
        #[arg(long, value_name = "DIR")]
        before: PathBuf,
        /// Edited checkpoint.
        #[arg(long, value_name = "DIR")]
        after: Option<PathBuf>,
        /// First token id (inclusive).
        #[arg(long)]
        start: u32,
        /// Last token id (exclusive).
        #[arg(long)]
        end: u32,
        #[arg(long, value_enum, default_value = "row-norm")]
        reduction: ReductionArg,
        /// Risk table used for the class/risk/scale columns.
        #[arg(long, value_name = "FILE")]
        risk_table: Option<PathBuf>,
        #[command(flatten)]
        smoothing: SmoothingArgs,
        #[arg(long = "out", value_name = "FILE")]
        out: Option<PathBuf>,
    },
    /// Suppression rate of a corpus of generated text.
    Metrics {
        /// NDJSON of {id, text}; `-` reads stdin.
        #[arg(long, value_name = "FILE")]
        input: PathBuf,
        /// Treat each input line as a document instead of NDJSON.
        #[arg(long)]
        plain: bool,
        #[arg(long, value_delimiter = ',', num_args = 1..)]
        ranges: Option<Vec<String>>,
        #[arg(long, value_enum)]
        rule: Option<RuleArg>,
        /// Ratio threshold for `--rule ratio` (flag if ratio > threshold).
        #[arg(long)]
        threshold: Option<f64>,
        /// Per-document CSV output.
        #[arg(long, value_name = "FILE")]
        csv: Option<PathBuf>,
        #[arg(long, value_name = "FILE")]
        report: Option<PathBuf>,
    },
}

impl From<PoolArg> for PartnerPool {
    fn from(p: PoolArg) -> Self {
        match p {
            PoolArg::BrokenOnly => PartnerPool::BrokenOnly,
            PoolArg::BrokenAndTarget => PartnerPool::BrokenAndTarget,
        }
    }
}

impl From<PositionsArg> for Positions {
    fn from(p: PositionsArg) -> Self {
        match p {
            PositionsArg::All => Positions::All,
            PositionsArg::FirstOnly => Positions::FirstOnly,
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let body = serde_json::json!({"error": {"kind": e.kind, "exit_code": e.code, "message": e.message}});
            eprintln!("{body}");
            ExitCode::from(e.code)
        }
    }
}
