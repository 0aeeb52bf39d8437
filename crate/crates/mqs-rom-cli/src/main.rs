//! `mqs-rom`: pipeline driver for quasilinear field/circuit model reduction.
//!
//! Stages: generate (problem bundle), simulate (full | regularized | ode
//! trajectories), reduce (snapshot bases and projected matrices), verify
//! (index, structure, passivity, and error-bound checks), report (plot-ready
//! CSV series). Exit codes: 0 success, 2 config or missing-artifact error,
//! 3 numerical failure, 4 a verification check failed.

mod config;
mod error;
mod manifest;
mod report;
mod stages;
mod verify;

use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};

use config::PipelineConfig;
use error::CliError;
use stages::SimTarget;

#[derive(Parser)]
#[command(
    name = "mqs-rom",
    version,
    about = "Model reduction pipeline for quasilinear magneto-quasistatic field/circuit systems",
    long_about = "Runs the reduction pipeline stage by stage from one TOML config \
                  (see the crate README for the key grammar). Artifacts accumulate in the \
                  configured output directory together with a digest manifest. Stages consume \
                  only persisted artifacts, so each one can be rerun in isolation.\n\n\
                  Exit codes: 0 success, 2 config or missing-artifact error, 3 numerical \
                  failure, 4 verification check failed."
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
    /// Pipeline configuration file.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Override a config key, e.g. --set grid.dt=1e-5 (repeatable).
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Also write the regularization transforms (W, Yhat, Cr) as Matrix
    /// Market files.
    #[arg(long, global = true)]
    dump_transforms: bool,
}

#[derive(Subcommand)]
enum Cmd {
    /// Build (or ingest) the problem and persist it as a bundle.
    Generate,
    /// Integrate one model form on the training input.
    Simulate {
        /// Which model to integrate.
        #[arg(long, value_enum, default_value_t = Which::Ode)]
        which: Which,
    },
    /// Compute the snapshot bases and the projected system.
    Reduce,
    /// Run every verification check against the persisted artifacts.
    Verify,
    /// Emit plot-ready CSV series from the verification artifacts.
    Report,
}

#[derive(Clone, Copy, ValueEnum)]
enum Which {
    Full,
    Regularized,
    Ode,
}

impl From<Which> for SimTarget {
    fn from(w: Which) -> SimTarget {
        match w {
            Which::Full => SimTarget::Full,
            Which::Regularized => SimTarget::Regularized,
            Which::Ode => SimTarget::Ode,
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| CliError::Config("--config <FILE> is required".into()))?;
    let cfg = PipelineConfig::load(path, &cli.set)?;
    match cli.cmd {
        Cmd::Generate => stages::cmd_generate(&cfg, cli.dump_transforms),
        Cmd::Simulate { which } => stages::cmd_simulate(&cfg, which.into(), cli.dump_transforms),
        Cmd::Reduce => stages::cmd_reduce(&cfg, cli.dump_transforms),
        Cmd::Verify => verify::cmd_verify(&cfg, cli.dump_transforms),
        Cmd::Report => report::cmd_report(&cfg),
    }
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {}", e);
        std::process::exit(e.exit_code());
    }
}
