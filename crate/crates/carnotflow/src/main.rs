//! Batch front-end for the flow library: `simulate` runs one experiment,
//! `verify` runs oracle/identity/barrier suites, `compare` runs two
//! experiments and checks their ordering. Each command reads a single JSON
//! config and writes CSV and JSON artifacts to an output directory.

mod commands;
mod config;

use std::path::PathBuf;
use std::process;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

// Exit-code contract: 0 pass, 1 comparison/ordering/check failure,
// 2 solver abort, 64 config error, 65 incompatible pair.
pub const EXIT_PASS: i32 = 0;
pub const EXIT_CHECK_FAILED: i32 = 1;
pub const EXIT_SOLVER_ABORT: i32 = 2;
pub const EXIT_CONFIG: i32 = 64;
pub const EXIT_INCOMPATIBLE: i32 = 65;

/// Terminal failure: a message plus the exit code it maps to.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl Failure {
    pub fn config(message: impl Into<String>) -> Failure {
        Failure {
            code: EXIT_CONFIG,
            message: message.into(),
        }
    }

    pub fn incompatible(message: impl Into<String>) -> Failure {
        Failure {
            code: EXIT_INCOMPATIBLE,
            message: message.into(),
        }
    }
}

impl From<carnot_core::Error> for Failure {
    /// Library errors surface as config errors, except solver aborts,
    /// which keep their dedicated code.
    fn from(err: carnot_core::Error) -> Failure {
        let code = match err {
            carnot_core::Error::SolverAbort { .. } => EXIT_SOLVER_ABORT,
            _ => EXIT_CONFIG,
        };
        Failure {
            code,
            message: err.to_string(),
        }
    }
}

#[derive(Parser)]
#[command(name = "carnotflow", version, about = "Horizontal Gauss curvature flow experiments")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one flow experiment; write snapshots, diagnostics, and a summary.
    Simulate(CommonArgs),
    /// Run the selected oracle/identity/barrier checks against a group.
    Verify(CommonArgs),
    /// Run two experiments and check the lower <= upper ordering.
    Compare(CommonArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// Path to the JSON experiment config.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides the config's `out`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Tolerance override (overrides the config's `tol`).
    #[arg(long)]
    tol: Option<f64>,
}

/// Everything a command needs besides its parsed config.
pub struct Invocation {
    pub command: &'static str,
    pub config_path: PathBuf,
    pub out_flag: Option<PathBuf>,
    pub tol_flag: Option<f64>,
    /// Requested worker cap from CARNOTFLOW_THREADS (0 = auto).
    pub thread_cap: usize,
    /// Workers actually used.
    pub workers: usize,
}

/// Parses CARNOTFLOW_THREADS; 0 or unset means auto.
fn thread_cap() -> Result<usize, Failure> {
    match std::env::var("CARNOTFLOW_THREADS") {
        Ok(s) => s.trim().parse::<usize>().map_err(|_| {
            Failure::config(format!(
                "CARNOTFLOW_THREADS must be a non-negative integer (0 = auto), got `{s}`"
            ))
        }),
        Err(std::env::VarError::NotPresent) => Ok(0),
        Err(std::env::VarError::NotUnicode(_)) => {
            Err(Failure::config("CARNOTFLOW_THREADS is not valid UTF-8"))
        }
    }
}

/// Worker count after applying the cap. The numerical kernels are
/// sequential, so the cap is validated and echoed but at most one worker
/// runs; auto resolves against the machine before the clamp.
fn effective_workers(cap: usize) -> usize {
    let auto = std::thread::available_parallelism().map_or(1, |n| n.get());
    let requested = if cap == 0 { auto } else { cap.min(auto) };
    requested.min(1)
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            let code = match err.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => EXIT_PASS,
                _ => EXIT_CONFIG,
            };
            let _ = err.print();
            process::exit(code);
        }
    };
    let cap = match thread_cap() {
        Ok(cap) => cap,
        Err(failure) => {
            eprintln!("error: {}", failure.message);
            process::exit(failure.code);
        }
    };
    let workers = effective_workers(cap);
    let (command, args) = match cli.command {
        Cmd::Simulate(args) => ("simulate", args),
        Cmd::Verify(args) => ("verify", args),
        Cmd::Compare(args) => ("compare", args),
    };
    let invocation = Invocation {
        command,
        config_path: args.config,
        out_flag: args.out,
        tol_flag: args.tol,
        thread_cap: cap,
        workers,
    };
    match commands::run(&invocation) {
        Ok(code) => process::exit(code),
        Err(failure) => {
            eprintln!("error: {}", failure.message);
            process::exit(failure.code);
        }
    }
}
