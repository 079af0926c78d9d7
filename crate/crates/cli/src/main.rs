//! Command-line experiments for stochastic abelian networks: validation,
//! criticality classification, simulation, toppling-walk analysis, survival
//! estimation, conserved-quantity detection, and parameter sweeps.
//!
//! Exit codes: 0 success, 1 domain or validation failure, 2 input error.
//! Every randomized command takes an explicit `--seed`; each command prints a
//! manifest line (with an output digest) to stderr.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod io;
mod run;

#[derive(Parser)]
#[command(
    name = "abelnet",
    version,
    about = "Stochastic abelian network toolkit"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate a network document: MOLI, BFB, environment chains,
    /// primitivity, and advisory checks.
    Validate {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        pretty: bool,
    },
    /// Compute the criticality parameter and classify the regime.
    Classify {
        #[arg(long)]
        spec: PathBuf,
        /// Half-width of the critical band around rho = 0.
        #[arg(long, default_value_t = 1e-9)]
        eps: f64,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        pretty: bool,
    },
    /// Run the legal dynamics; one JSON line per run.
    Simulate {
        #[arg(long)]
        spec: PathBuf,
        /// Initial counts as JSON, e.g. '{"u": 10, "v": 10}'.
        #[arg(long)]
        eta: String,
        /// Initial environment as JSON, e.g. '{"u": "good"}'; omitted
        /// vertices start in their first declared state.
        #[arg(long)]
        q0: Option<String>,
        #[arg(long)]
        seed: u64,
        #[arg(long, default_value_t = 1)]
        runs: u64,
        #[arg(long, default_value_t = 1_000_000)]
        max_steps: u64,
        /// Record the trajectory every N steps.
        #[arg(long)]
        snapshot_every: Option<u64>,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the eigenvector-sampled toppling walk and report excursion
    /// statistics against the drift and stationary-law predictions.
    Walk {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        eta: Option<String>,
        #[arg(long)]
        q0: Option<String>,
        #[arg(long)]
        excursions: u64,
        #[arg(long)]
        seed: u64,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        pretty: bool,
    },
    /// Fraction of legal runs still active at the horizon, with a Wilson CI.
    Survive {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        eta: String,
        #[arg(long)]
        q0: Option<String>,
        #[arg(long)]
        horizon: u64,
        #[arg(long)]
        runs: u64,
        #[arg(long)]
        seed: u64,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Detect a conserved quantity; when one exists, verify it along seeded
    /// trajectories and construct a never-stabilizing initial state.
    Conserved {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        seed: u64,
        #[arg(long, default_value_t = 1e-9)]
        eps: f64,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        pretty: bool,
    },
    /// Sweep a one-knob template over a grid; CSV rows of
    /// (knob, rho, regime, survival fraction).
    Sweep {
        /// Template document; strings containing `$KNOB` are replaced by the
        /// grid value (affine expressions like "1-0.25*$KNOB" allowed).
        #[arg(long)]
        template: PathBuf,
        /// Comma-separated knob values; empty for an empty table.
        #[arg(long)]
        grid: String,
        #[arg(long)]
        seed: u64,
        #[arg(long, default_value_t = 10_000)]
        horizon: u64,
        #[arg(long, default_value_t = 200)]
        runs: u64,
        #[arg(long, default_value_t = 1e-9)]
        eps: f64,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn dispatch(cli: Cli) -> Result<(), io::CliError> {
    match cli.command {
        Command::Validate { spec, pretty } => run::cmd_validate(&spec, pretty),
        Command::Classify {
            spec,
            eps,
            out,
            pretty,
        } => run::cmd_classify(&spec, eps, out.as_deref(), pretty),
        Command::Simulate {
            spec,
            eta,
            q0,
            seed,
            runs,
            max_steps,
            snapshot_every,
            jobs,
            out,
        } => run::cmd_simulate(
            &spec,
            &eta,
            q0.as_deref(),
            seed,
            runs,
            max_steps,
            snapshot_every,
            jobs,
            out.as_deref(),
        ),
        Command::Walk {
            spec,
            eta,
            q0,
            excursions,
            seed,
            jobs,
            out,
            pretty,
        } => run::cmd_walk(
            &spec,
            eta.as_deref(),
            q0.as_deref(),
            excursions,
            seed,
            jobs,
            out.as_deref(),
            pretty,
        ),
        Command::Survive {
            spec,
            eta,
            q0,
            horizon,
            runs,
            seed,
            jobs,
            out,
        } => run::cmd_survive(
            &spec,
            &eta,
            q0.as_deref(),
            horizon,
            runs,
            seed,
            jobs,
            out.as_deref(),
        ),
        Command::Conserved {
            spec,
            seed,
            eps,
            out,
            pretty,
        } => run::cmd_conserved(&spec, seed, eps, out.as_deref(), pretty),
        Command::Sweep {
            template,
            grid,
            seed,
            horizon,
            runs,
            eps,
            jobs,
            out,
        } => run::cmd_sweep(
            &template,
            &grid,
            seed,
            horizon,
            runs,
            eps,
            jobs,
            out.as_deref(),
        ),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {}", err.message());
            ExitCode::from(err.code())
        }
    }
}
