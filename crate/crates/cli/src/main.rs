//! `fedaug`: scenario generation, solving, simulation, curve fitting and
//! parameter sweeps for energy-aware federated learning with synthesized data.
//!
//! Exit codes: 0 success, 1 other failure, 2 usage, 3 configuration,
//! 4 unreachable error budget, 5 insufficient bandwidth, 6 no feasible time
//! split found, 7 I/O, 8 a device cannot meet the deadline.

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::error::CliError;

#[derive(Parser, Debug)]
#[command(name = "fedaug", version, about = "Energy-aware federated learning planner")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// TOML file with `seed`, `[scenario]` and `[ce]` tables.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for scenario generation and the search.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Override a configuration field, e.g. `--set t_max=45` or `--set ce.max_iters=30`.
    #[arg(long = "set", value_name = "FIELD=VALUE", global = true)]
    set: Vec<String>,
    /// Evaluation threads for the search (0 uses every core).
    #[arg(long, global = true)]
    workers: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Draw a scenario and write it as JSON.
    Generate {
        /// Number of devices.
        #[arg(long)]
        devices: Option<String>,
    },
    /// Solve the allocation problem for one policy.
    Solve {
        /// Scenario JSON; generated from the configuration when omitted.
        #[arg(long)]
        scenario: Option<PathBuf>,
        /// FIMI, TFL, HDC or UNIFORM_BW.
        #[arg(long, default_value = "FIMI")]
        policy: String,
    },
    /// Run policies and write surrogate training trajectories.
    Simulate {
        /// Scenario JSON; generated from the configuration when omitted.
        #[arg(long)]
        scenario: Option<PathBuf>,
        /// Policies to run; all of them when omitted.
        #[arg(long)]
        policy: Vec<String>,
    },
    /// Fit the power-law learning curve to `data_amount,observed_error` rows.
    Fit {
        /// CSV of observations; the built-in proxy measurements when omitted.
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Solve over a list of values for one field.
    Sweep {
        /// Scenario JSON; generated from the configuration when omitted.
        #[arg(long)]
        scenario: Option<PathBuf>,
        /// Field to vary, with the same names as `--set`.
        #[arg(long)]
        field: String,
        /// Comma-separated values.
        #[arg(long, allow_hyphen_values = true)]
        values: String,
        /// Policies to run at each value; FIMI when omitted.
        #[arg(long)]
        policy: Vec<String>,
    },
    /// Layer-averaged cosine similarity between two gradient files.
    Similarity {
        /// JSON list of per-layer arrays.
        #[arg(long)]
        reference: PathBuf,
        /// JSON list of per-layer arrays with the same shapes.
        #[arg(long)]
        device: PathBuf,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    let c = &cli.common;
    match cli.command {
        Command::Generate { devices } => commands::generate(c, devices.as_deref()),
        Command::Solve { scenario, policy } => commands::solve(c, scenario.as_deref(), &policy),
        Command::Simulate { scenario, policy } => commands::simulate(c, scenario.as_deref(), &policy),
        Command::Fit { input } => commands::fit(c, input.as_deref()),
        Command::Sweep {
            scenario,
            field,
            values,
            policy,
        } => commands::sweep(c, scenario.as_deref(), &field, &values, &policy),
        Command::Similarity { reference, device } => commands::similarity(c, &reference, &device),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
