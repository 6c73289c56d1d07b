//! `entronas`: build entropy tables, score and cost architectures, and run
//! the constrained search from the command line.
//!
//! Exit codes: 0 success, 1 infeasible budget or failed search, 2 usage or
//! parse error, 3 I/O error.

mod commands;
mod manifest;

use std::fmt;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use entronas_core::{Error, Metric};

/// Directory for cached entropy tables when `--table` is not given.
pub const TABLE_DIR_ENV: &str = "ENTRONAS_TABLE_DIR";
const DEFAULT_TABLE_DIR: &str = ".entronas/tables";

#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn new(code: u8, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }

    pub fn usage(message: impl Into<String>) -> Self {
        Self::new(2, message)
    }

    pub fn io(path: &Path, err: std::io::Error) -> Self {
        Self::new(3, format!("{}: {err}", path.display()))
    }

    pub fn internal(err: impl fmt::Display) -> Self {
        Self::new(1, err.to_string())
    }

    /// Wraps a library error, prefixing `context` (usually a file path).
    pub fn from_core(context: &str, err: Error) -> Self {
        let code = match &err {
            Error::Io(_) => 3,
            Error::Json(_)
            | Error::Schema { .. }
            | Error::InvalidArch(_)
            | Error::InvalidSpace(_)
            | Error::InvalidConfig(_)
            | Error::StaleTable(_)
            | Error::MissingKey { .. }
            | Error::SeqLen { .. }
            | Error::MissingProfile
            | Error::Domain(_) => 2,
            Error::InfeasibleBudget(_)
            | Error::RejectionLimit { .. }
            | Error::SpaceTooLarge { .. }
            | Error::OutOfGrid { .. }
            | Error::Decomposition { .. } => 1,
        };
        let message = if context.is_empty() {
            err.to_string()
        } else {
            format!("{context}: {err}")
        };
        Self::new(code, message)
    }
}

impl From<Error> for CliError {
    fn from(err: Error) -> Self {
        Self::from_core("", err)
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

#[derive(Parser, Debug)]
#[command(
    name = "entronas",
    version,
    about = "Entropy-driven search for small transformer decoders"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Precompute expected matrix entropies for every shape of a space.
    BuildTable(BuildTableArgs),
    /// Print the score breakdown of an architecture.
    Score(ScoreArgs),
    /// Run the evolutionary search under a budget.
    Search(SearchArgs),
    /// Report parameters, FLOPs and optionally latency of an architecture.
    Cost(CostArgs),
    /// Run one of the comparison baselines.
    Baseline(BaselineArgs),
}

#[derive(Args, Debug, Clone, Default)]
pub struct TableArgs {
    /// Search space JSON; the built-in default space when omitted.
    #[arg(long)]
    pub space: Option<PathBuf>,
    /// Entropy table JSON; looked up in the table cache when omitted.
    #[arg(long)]
    pub table: Option<PathBuf>,
    /// Entropy settings JSON; defaults, or the table's own settings.
    #[arg(long)]
    pub entropy_config: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct BuildTableArgs {
    #[arg(long)]
    pub space: Option<PathBuf>,
    #[arg(long)]
    pub entropy_config: Option<PathBuf>,
    /// Output path; defaults to a file in the table cache.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Rebuild even if a table with matching settings already exists.
    #[arg(long)]
    pub force: bool,
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Args, Debug)]
pub struct ScoreArgs {
    #[arg(long)]
    pub arch: PathBuf,
    #[command(flatten)]
    pub table: TableArgs,
    /// Estimate entropies afresh; with a table, report both and their gap.
    #[arg(long)]
    pub direct: bool,
    /// Also write a run manifest here.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, Default)]
pub struct BudgetArgs {
    #[arg(long)]
    pub metric: Option<Metric>,
    /// Budget limit: parameters, FLOPs, or milliseconds.
    #[arg(long)]
    pub limit: Option<f64>,
    #[arg(long)]
    pub seq_len: Option<u32>,
    /// Device latency profile JSON, required for `--metric latency`.
    #[arg(long)]
    pub device: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, Default)]
pub struct SearchFlags {
    #[arg(long)]
    pub iters: Option<u64>,
    #[arg(long)]
    pub pop: Option<usize>,
    #[arg(long)]
    pub parents: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Search settings JSON; flags take precedence over it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Args, Debug)]
pub struct SearchArgs {
    #[command(flatten)]
    pub table: TableArgs,
    #[command(flatten)]
    pub budget: BudgetArgs,
    #[command(flatten)]
    pub search: SearchFlags,
    /// Directory receiving best_arch.json, result.json, history.csv and
    /// manifest.json.
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Table,
}

#[derive(Args, Debug)]
pub struct CostArgs {
    #[arg(long)]
    pub arch: PathBuf,
    #[arg(long)]
    pub metric: Metric,
    #[arg(long)]
    pub seq_len: Option<u32>,
    #[arg(long)]
    pub device: Option<PathBuf>,
    /// Adds a `feasible` verdict against this limit.
    #[arg(long)]
    pub limit: Option<f64>,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    pub format: Format,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum BaselineKind {
    Random,
    ScaleDepth,
    ScaleWidth,
    DecoderParam,
}

#[derive(Args, Debug)]
pub struct BaselineArgs {
    #[arg(long, value_enum)]
    pub kind: BaselineKind,
    #[command(flatten)]
    pub table: TableArgs,
    #[command(flatten)]
    pub budget: BudgetArgs,
    #[command(flatten)]
    pub search: SearchFlags,
    /// Write the result here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

pub fn table_cache_dir() -> PathBuf {
    std::env::var_os(TABLE_DIR_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(DEFAULT_TABLE_DIR))
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::BuildTable(a) => commands::build_table(a),
        Command::Score(a) => commands::score(a),
        Command::Search(a) => commands::search(a),
        Command::Cost(a) => commands::cost(a),
        Command::Baseline(a) => commands::baseline(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code)
        }
    }
}
