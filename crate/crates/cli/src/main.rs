//! `ripw` command-line interface.
//!
//! Exit codes: 0 on success, 2 on invalid input, 3 on numeric failure.

mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use ripw::error::RipwError;

#[derive(Debug, Parser)]
#[command(name = "ripw", version, about = "Reshaped inverse propensity weighted TWFE estimation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Solve the DATE equation on a design support.
    SolveDate {
        #[arg(long)]
        design: PathBuf,
        /// `equal` or `csv:<path>` with T comma- or newline-separated weights.
        #[arg(long, default_value = "equal")]
        xi: String,
        #[arg(long, default_value_t = 0.5)]
        lambda: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Write the JSON here instead of stdout.
        #[arg(long, short)]
        output: Option<PathBuf>,
    },
    /// Estimate the DATE on a long-format panel.
    Estimate {
        #[arg(long)]
        panel: PathBuf,
        #[arg(long)]
        design: PathBuf,
        /// `solved` or a JSON file holding a reshaped distribution.
        #[arg(long, default_value = "solved")]
        reshape: String,
        #[arg(long, default_value = "equal")]
        xi: String,
        #[arg(long, default_value_t = 0.5)]
        lambda: f64,
        /// `design`, `empirical`, `stratified:<col>` or `hazard:<col1,col2,...>`.
        #[arg(long, default_value = "design")]
        propensity: String,
        /// `zero` or `twfe-covariates`.
        #[arg(long, default_value = "zero")]
        outcome: String,
        #[arg(long)]
        crossfit: Option<usize>,
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Monte Carlo study of the unweighted, IPW and RIPW estimators.
    Simulate {
        /// `pta`, `cte-const` or `cte-uniform`.
        #[arg(long)]
        scenario: String,
        #[arg(long, default_value_t = ripw::sim::DEFAULT_N)]
        n: usize,
        #[arg(long, default_value_t = ripw::sim::DEFAULT_REPS)]
        reps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Use n = 10000 and 1000 replicates.
        #[arg(long)]
        full_scale: bool,
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
        /// Write per-replicate rows to this CSV file.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Effect weights (nT) * xi_it for the unweighted or RIPW estimator.
    Weights {
        /// `unweighted` or `ripw`.
        #[arg(long)]
        estimator: String,
        #[arg(long, default_value_t = 10_000)]
        reps: usize,
        #[arg(long, default_value_t = 100)]
        n: usize,
        #[arg(long, default_value = "pta")]
        scenario: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Write the CSV here and print a JSON summary to stdout.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
}

fn configure_threads() -> Result<(), RipwError> {
    let Ok(raw) = std::env::var("RIPW_THREADS") else {
        return Ok(());
    };
    let threads: usize = raw
        .trim()
        .parse()
        .map_err(|_| RipwError::InvalidArgument(format!("RIPW_THREADS = '{raw}' is not a count")))?;
    if threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| RipwError::InvalidArgument(format!("thread pool: {e}")))?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), RipwError> {
    configure_threads()?;
    match cli.command {
        Command::SolveDate {
            design,
            xi,
            lambda,
            seed,
            output,
        } => commands::solve_date(&design, &xi, lambda, seed, output.as_deref()),
        Command::Estimate {
            panel,
            design,
            reshape,
            xi,
            lambda,
            propensity,
            outcome,
            crossfit,
            alpha,
            seed,
        } => commands::estimate(&commands::EstimateArgs {
            panel: &panel,
            design: &design,
            reshape: &reshape,
            xi: &xi,
            lambda,
            propensity: &propensity,
            outcome: &outcome,
            crossfit,
            alpha,
            seed,
        }),
        Command::Simulate {
            scenario,
            n,
            reps,
            seed,
            full_scale,
            alpha,
            csv,
        } => {
            let (n, reps) = if full_scale {
                (ripw::sim::FULL_SCALE_N, ripw::sim::FULL_SCALE_REPS)
            } else {
                (n, reps)
            };
            commands::simulate(&scenario, n, reps, seed, alpha, csv.as_deref())
        }
        Command::Weights {
            estimator,
            reps,
            n,
            scenario,
            seed,
            csv,
        } => commands::weights(&estimator, reps, n, &scenario, seed, csv.as_deref()),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numeric() { 3 } else { 2 })
        }
    }
}
