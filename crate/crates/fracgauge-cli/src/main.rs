//! Command-line front end for the fracgauge library.
//!
//! Three subcommands share one JSON config format: `solve` runs the
//! Neumann series for u = Gν + 𝒢ω·u, `gauge` computes u₁ = 1 + 𝒢ω, and
//! `verify` runs one named consistency check. Exit codes: 0 on success,
//! 1 on usage or configuration errors, 2 when the mathematics refuses
//! (series divergence or a failed verification).

mod config;
mod report;
mod runner;

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context as _;
use clap::{Args, Parser, Subcommand};

use crate::config::RunConfig;
use crate::runner::{cmd_gauge, cmd_solve, cmd_verify, Check, RunContext};

#[derive(Parser)]
#[command(name = "fracgauge", version, about = "Fractional Schrödinger gauge solver")]
struct Cli {
    /// Worker threads (defaults to FRACGAUGE_THREADS, then all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Args)]
struct RunArgs {
    /// Path to the JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output directory for report.json and CSV artifacts
    /// (overrides the config's `out_dir`; defaults to the working
    /// directory).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Solve u = Gν + 𝒢ω·u by Neumann series.
    Solve(RunArgs),
    /// Compute the gauge u₁ = 1 + 𝒢ω.
    Gauge(RunArgs),
    /// Run one named consistency check.
    Verify {
        #[command(flatten)]
        run: RunArgs,
        /// Which check to run.
        #[arg(long, value_enum)]
        check: Check,
    },
}

fn thread_count(flag: Option<usize>) -> Option<usize> {
    flag.or_else(|| {
        std::env::var("FRACGAUGE_THREADS")
            .ok()
            .and_then(|s| s.parse().ok())
    })
}

fn load_config(path: &PathBuf) -> anyhow::Result<RunConfig> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("reading config {}", path.display()))?;
    let config: RunConfig = serde_json::from_str(&text)
        .with_context(|| format!("parsing config {}", path.display()))?;
    Ok(config)
}

fn run(cli: Cli) -> anyhow::Result<u8> {
    if let Some(threads) = thread_count(cli.threads) {
        // A second global-pool build (e.g. under tests) is harmless.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global();
    }
    match cli.command {
        Cmd::Solve(args) => {
            let ctx = RunContext::new(load_config(&args.config)?, args.out)?;
            cmd_solve(&ctx)
        }
        Cmd::Gauge(args) => {
            let ctx = RunContext::new(load_config(&args.config)?, args.out)?;
            cmd_gauge(&ctx)
        }
        Cmd::Verify { run, check } => {
            let ctx = RunContext::new(load_config(&run.config)?, run.out)?;
            cmd_verify(&ctx, check)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Usage problems are exit 1; clap's own convention is 2,
            // which this tool reserves for mathematical divergence.
            let _ = e.print();
            return ExitCode::from(u8::from(e.use_stderr()));
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
