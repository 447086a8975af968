//! Command-line workflow for stratified model-assisted estimation with
//! surrogate outcomes: stratify, allocate, sample, estimate, decompose,
//! simulate, and trace power curves, all over CSV files.
//!
//! Exit codes: 0 on success, 1 on data or validation errors, 2 on usage
//! errors. Every run that produces randomness derives it from `--seed` (or
//! the seed in the config file), and every file output is accompanied by a
//! `<output>.manifest.json` recording the invocation.

mod commands;
mod manifest;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "stratest",
    version,
    about = "Design-based estimation with surrogate outcomes and budgeted gold-standard coding"
)]
struct Cli {
    /// Worker thread count for simulation (default: all cores, or the
    /// STRATEST_THREADS environment variable).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compute a point estimate with SE and CI from a (partially) coded CSV.
    Estimate(commands::EstimateArgs),
    /// Compute per-stratum coding quotas (proportional or capped Neyman).
    Allocate(commands::AllocateArgs),
    /// Generate, score, and rank candidate stratifications.
    Stratify(commands::StratifyArgs),
    /// Run the factorial simulation grid, or re-sample a fixed dataset.
    Simulate(commands::SimulateArgs),
    /// Minimum detectable effect size across coding fractions.
    Power(commands::PowerArgs),
    /// Between/within-strata split of the variance gain over SRS.
    Decompose(commands::DecomposeArgs),
}

fn main() {
    let cli = Cli::parse();
    let threads = cli.threads.or_else(|| {
        std::env::var("STRATEST_THREADS")
            .ok()
            .and_then(|s| s.parse().ok())
    });
    if let Some(t) = threads {
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global();
    }
    let result = match &cli.command {
        Command::Estimate(args) => commands::run_estimate(args),
        Command::Allocate(args) => commands::run_allocate(args),
        Command::Stratify(args) => commands::run_stratify(args),
        Command::Simulate(args) => commands::run_simulate(args),
        Command::Power(args) => commands::run_power(args),
        Command::Decompose(args) => commands::run_decompose(args),
    };
    if let Err(e) = result {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
