//! Command-line front end: `run`, `verify` and `convergence`.

pub mod commands;
pub mod config;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

use commands::{cmd_convergence, cmd_run, cmd_verify, ConvergenceArgs};

#[derive(Parser)]
#[command(name = "emcouple", version, about = "Coupled interior dG / boundary CQ solver for time-domain Maxwell")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a simulation described by a key = value config file.
    Run { config: PathBuf },
    /// Run a verification suite: green, coercivity, cq, calderon or energy.
    Verify {
        suite: String,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Self-convergence study: space, time or joint.
    Convergence {
        kind: String,
        /// Number of levels, or a comma-separated list ending in the reference.
        #[arg(long, default_value = "3")]
        levels: String,
        #[arg(long)]
        t_final: Option<f64>,
        /// Cube divisions for the time study.
        #[arg(long)]
        divisions: Option<usize>,
        #[arg(long)]
        memory_cap_mb: Option<usize>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
}

/// Parse `args` (program name first), execute, and return the exit code.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let outcome = match cli.command {
        Command::Run { config } => cmd_run(&config),
        Command::Verify { suite, out, seed } => cmd_verify(&suite, &out, seed),
        Command::Convergence { kind, levels, t_final, divisions, memory_cap_mb, out } => {
            cmd_convergence(&ConvergenceArgs { kind, levels, t_final, divisions, memory_cap_mb, out })
        }
    };
    match outcome {
        Ok(()) => 0,
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.code
        }
    }
}
