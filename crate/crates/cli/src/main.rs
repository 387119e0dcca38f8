//! `funlat` — command-line harness around the library: field simulation,
//! estimator evaluation, small-ball tables, concentration ladders, volume
//! partitions and the acceptance gate.
//!
//! Every artifact-producing run reads one JSON config file, resolves flag and
//! environment overrides, and writes its outputs plus a resolved-config
//! snapshot into a directory named by the config hash, so any artifact can be
//! regenerated from the hash and seed embedded in its header.
//!
//! Exit codes: 0 success; 1 configuration error (bad argv, unreadable or
//! invalid config, unknown keys, invalid parameter values at build time);
//! 2 runtime failure (generation, estimation, I/O on artifacts, budget
//! overrun); 3 acceptance-suite failure (`check` only). Failures print a
//! human-readable line followed by a single machine-readable JSON line on
//! stderr.

mod commands;
mod config;
mod sample_io;

use std::ffi::OsString;

use clap::error::ErrorKind as ClapErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;
pub const EXIT_CHECK_FAILED: i32 = 3;

/// A failure bound to a process exit code.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub kind: String,
    pub message: String,
}

impl CliError {
    pub fn config(kind: impl Into<String>, message: impl Into<String>) -> Self {
        CliError { code: EXIT_CONFIG, kind: kind.into(), message: message.into() }
    }

    pub fn runtime(kind: impl Into<String>, message: impl Into<String>) -> Self {
        CliError { code: EXIT_RUNTIME, kind: kind.into(), message: message.into() }
    }

    /// Library failure while building specs from the config file: the values
    /// came from configuration, so the run never started.
    pub fn from_build(err: funlat::Error) -> Self {
        CliError::config(error_kind(&err), err.to_string())
    }

    /// Library failure during execution.
    pub fn from_run(err: funlat::Error) -> Self {
        CliError::runtime(error_kind(&err), err.to_string())
    }
}

fn error_kind(err: &funlat::Error) -> &'static str {
    use funlat::Error;
    match err {
        Error::InvalidParameter { .. } => "invalid_parameter",
        Error::DimensionMismatch(_) => "dimension_mismatch",
        Error::CoveringTooLarge { .. } => "covering_too_large",
        Error::DenominatorUnderflow { .. } => "denominator_underflow",
        Error::SmallBallUnavailable(_) => "small_ball_unavailable",
        Error::NotLipschitz(_) => "not_lipschitz",
        Error::CertificateMismatch(_) => "certificate_mismatch",
        Error::BetaOutsideRegion(_) => "beta_outside_region",
        Error::StatisticMismatch(_) => "statistic_mismatch",
        Error::SupportTooLarge(_) => "support_too_large",
        Error::InsufficientData(_) => "insufficient_data",
        Error::ResourceCap(_) => "resource_cap",
        Error::Parse(_) => "parse",
        Error::Io(_) => "io",
        Error::Serde(_) => "serde",
    }
}

/// Prints a line to stdout, ignoring a closed pipe (`funlat ... | head`).
pub fn say(line: impl std::fmt::Display) {
    use std::io::Write;
    let _ = writeln!(std::io::stdout(), "{line}");
}

fn emit_error(err: &CliError) {
    use std::io::Write;
    let mut stderr = std::io::stderr();
    let _ = writeln!(stderr, "error: {}", err.message);
    let json = serde_json::json!({
        "error": { "code": err.code, "kind": err.kind, "message": err.message }
    });
    let _ = writeln!(stderr, "{json}");
}

#[derive(Parser)]
#[command(
    name = "funlat",
    version,
    about = "Seeded harness for kernel regression with function-valued responses on lattices"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a random field sample and write it as a self-describing CSV.
    Simulate(RunArgs),
    /// Evaluate estimator errors over a covering, from a stored sample CSV.
    Estimate(RunArgs),
    /// Tabulate small-ball probabilities of a generator's marginal law.
    Smallball(RunArgs),
    /// Tail ladder: empirical exceedance frequencies against a fitted bound.
    Tail(RunArgs),
    /// Log-Laplace ladder over an admissible beta grid.
    Laplace(RunArgs),
    /// Sup-error rate ladder in one dependence regime.
    Rate(RunArgs),
    /// Print a recursive middle-removal partition (and optional block cover).
    Partition(PartitionArgs),
    /// Run the acceptance suite; exits 3 if any criterion fails.
    Check(CheckArgs),
}

/// Flags shared by the artifact-producing subcommands. Flags override the
/// config file; `FUNLAT_OUTPUT_DIR` and `FUNLAT_THREADS` sit between the two.
#[derive(Args)]
pub struct RunArgs {
    /// JSON run configuration (see the README for the schema).
    #[arg(long)]
    pub config: std::path::PathBuf,
    /// Overrides the global seed from the config file.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Directory run folders are created under (default `runs`).
    #[arg(long)]
    pub output_dir: Option<std::path::PathBuf>,
    /// Worker-thread count; output bytes do not depend on it.
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Args)]
pub struct PartitionArgs {
    /// Number of axes.
    #[arg(long = "N")]
    pub n: usize,
    /// Axis lengths, comma-separated; a single value is broadcast to all axes.
    #[arg(long = "A")]
    pub a: String,
    /// Removal fraction per refinement, in (0, 1/2].
    #[arg(long)]
    pub delta: f64,
    /// Number of refinement levels (>= 1).
    #[arg(long)]
    pub levels: u32,
    /// Optional block edges for the parity cover, comma-separated like --A.
    #[arg(long = "P")]
    pub p: Option<String>,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum SuiteArg {
    /// Full-scale suite (the acceptance gate).
    Quick,
    /// Reduced replicate counts for a fast sanity pass.
    Smoke,
}

#[derive(Args)]
pub struct CheckArgs {
    #[arg(long, value_enum, default_value_t = SuiteArg::Quick)]
    pub suite: SuiteArg,
    /// Worker-thread count for the suite's parallel sections.
    #[arg(long)]
    pub threads: Option<usize>,
}

fn main() {
    std::process::exit(run(std::env::args_os()));
}

fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(err) => {
            if matches!(err.kind(), ClapErrorKind::DisplayHelp | ClapErrorKind::DisplayVersion) {
                print!("{err}");
                return EXIT_OK;
            }
            let rendered = err.render().to_string();
            emit_error(&CliError::config("argv", rendered.trim_end()));
            return EXIT_CONFIG;
        }
    };
    let outcome = match cli.command {
        Command::Simulate(args) => commands::simulate(&args),
        Command::Estimate(args) => commands::estimate(&args),
        Command::Smallball(args) => commands::smallball(&args),
        Command::Tail(args) => commands::tail(&args),
        Command::Laplace(args) => commands::laplace(&args),
        Command::Rate(args) => commands::rate(&args),
        Command::Partition(args) => commands::partition(&args),
        Command::Check(args) => commands::check(&args),
    };
    match outcome {
        Ok(code) => code,
        Err(err) => {
            emit_error(&err);
            err.code
        }
    }
}
