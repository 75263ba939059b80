//! `robust-phase`: command-line front end for the Robust-AM experiments.

// `!(x > 0.0)` also rejects NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::error::CliError;

#[derive(Parser, Debug)]
#[command(
    name = "robust-phase",
    version,
    about = "Robust phase retrieval by LAD alternating minimization"
)]
struct Cli {
    #[command(flatten)]
    common: CommonArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone, Default)]
pub struct CommonArgs {
    /// TOML config file; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Master seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory (a `.csv` file path for `theory`).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads; defaults to ROBUST_AM_PARALLELISM or the core count.
    #[arg(long, global = true)]
    pub parallelism: Option<usize>,
    /// Fill the wall_time_s column of trace CSVs.
    #[arg(long, global = true)]
    pub wall_time: bool,
    /// Print the config file contents after defaults are filled in, then exit.
    #[arg(long, global = true)]
    pub print_config: bool,
}

#[derive(Args, Debug, Clone, Default)]
pub struct SolverArgs {
    /// Inner solver: admm_lad, admm_lp or subgradient.
    #[arg(long)]
    pub solver: Option<String>,
    /// Initializer: spectral or oracle.
    #[arg(long)]
    pub init: Option<String>,
    /// Relative radius of the oracle initializer.
    #[arg(long)]
    pub radius: Option<f64>,
    #[arg(long)]
    pub max_outer: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run one instance end to end.
    Solve {
        #[arg(long)]
        d: Option<usize>,
        #[arg(long)]
        m: Option<usize>,
        /// Hadamard blocks.
        #[arg(long)]
        k: Option<usize>,
        /// gaussian or hadamard.
        #[arg(long)]
        operator: Option<String>,
        #[arg(long)]
        eta: Option<f64>,
        /// Outlier values: zero, cauchy or uniform.
        #[arg(long)]
        model: Option<String>,
        #[command(flatten)]
        solver: SolverArgs,
    },
    /// Success-rate grid over m/d and eta.
    PhaseGrid {
        #[arg(long)]
        d: Option<usize>,
        /// `a:b:s` or a comma-separated list.
        #[arg(long)]
        ratios: Option<String>,
        #[arg(long)]
        etas: Option<String>,
        #[arg(long)]
        model: Option<String>,
        #[arg(long)]
        sets: Option<usize>,
        #[arg(long)]
        signals: Option<usize>,
        #[arg(long)]
        tol: Option<f64>,
        #[command(flatten)]
        solver: SolverArgs,
    },
    /// Distance traces and their median over trials.
    Converge {
        #[arg(long)]
        d: Option<usize>,
        #[arg(long)]
        m: Option<usize>,
        #[arg(long)]
        eta: Option<f64>,
        #[arg(long)]
        model: Option<String>,
        #[arg(long)]
        trials: Option<usize>,
        #[command(flatten)]
        solver: SolverArgs,
    },
    /// Wall-clock comparison of the inner solvers.
    Runtime {
        #[arg(long)]
        d: Option<usize>,
        #[arg(long)]
        m: Option<usize>,
        #[arg(long)]
        eta: Option<f64>,
        /// Comma-separated outlier models.
        #[arg(long)]
        models: Option<String>,
        /// Comma-separated inner solvers.
        #[arg(long)]
        solvers: Option<String>,
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long)]
        tol: Option<f64>,
        #[arg(long)]
        max_outer: Option<usize>,
    },
    /// Success-rate grid over k and eta on images with Hadamard measurements.
    Image {
        /// Directory of PGM images; synthetic digits when absent.
        #[arg(long)]
        images: Option<PathBuf>,
        #[arg(long)]
        count: Option<usize>,
        #[arg(long)]
        ks: Option<String>,
        #[arg(long)]
        etas: Option<String>,
        #[arg(long)]
        tol: Option<f64>,
        #[command(flatten)]
        solver: SolverArgs,
    },
    /// Rate constants as CSV.
    Theory {
        #[arg(long)]
        etas: Option<String>,
    },
    /// Oracle-equivalence and rate-constant checks.
    Selftest,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp_millis()
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let _ = e.print();
            let err = CliError::Config(e.kind().to_string());
            eprintln!("{}", err.machine_line());
            return ExitCode::from(err.code() as u8);
        }
    };
    match commands::dispatch(&cli.common, cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("{err}");
            eprintln!("{}", err.machine_line());
            ExitCode::from(err.code() as u8)
        }
    }
}
