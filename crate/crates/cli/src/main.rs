//! `otstab`: run map certificates, stability sweeps, semi-discrete solves, witness
//! searches and instance validation from a JSON experiment config.

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use otstab_core::{Error, Family};

use crate::config::Overrides;

#[derive(Parser)]
#[command(name = "otstab", version, about = "Numerical experiments on the stability of optimal transport maps")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Certify the closed-form oracle maps (closest-point property and pushforward masses).
    VerifyMaps(Common),
    /// Sweep the stability ratio over a parameter grid and fit the Hölder exponent.
    Sweep(Common),
    /// Solve the semi-discrete problem and compare the solver's map with the oracle.
    SolveSdot(Common),
    /// Search for a parameter at which the map distance exceeds C·W_p^α.
    Witness(Common),
    /// Check a cell instance against every construction constraint.
    ValidateInstance(Common),
}

#[derive(Args)]
struct Common {
    /// JSON experiment config; built-in defaults are used when absent.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
    /// Monte Carlo budget per grid point.
    #[arg(long, value_name = "N")]
    samples: Option<usize>,
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    #[arg(long, value_parser = parse_family)]
    family: Option<Family>,
}

fn parse_family(s: &str) -> Result<Family, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

/// Error classes mapped to exit codes 1 and 2.
pub enum Failure {
    Config(anyhow::Error),
    Numerical(anyhow::Error),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Config(_) => 1,
            Failure::Numerical(_) => 2,
        }
    }

    fn error(&self) -> &anyhow::Error {
        match self {
            Failure::Config(e) | Failure::Numerical(e) => e,
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidDimension(_)
            | Error::Domain(_)
            | Error::InvalidParameter(_)
            | Error::Unsupported(_)
            | Error::IndexOutOfRange { .. }
            | Error::ConstraintViolation(_)
            | Error::NoWitnessGuarantee { .. } => Failure::Config(e.into()),
            _ => Failure::Numerical(e.into()),
        }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Numerical(e)
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    let (common, run_command): (Common, fn(&config::Resolved) -> Result<commands::Outcome, Failure>) = match cli.command {
        Command::VerifyMaps(c) => (c, commands::verify_maps),
        Command::Sweep(c) => (c, commands::sweep_cmd),
        Command::SolveSdot(c) => (c, commands::solve_sdot_cmd),
        Command::Witness(c) => (c, commands::witness_cmd),
        Command::ValidateInstance(mut c) => {
            c.family.get_or_insert(Family::Cell);
            (c, commands::validate_instance)
        }
    };
    let overrides = Overrides { family: common.family, seed: common.seed, samples: common.samples, out: common.out };
    let resolved = config::load(common.config.as_deref(), overrides)?;
    let outcome = run_command(&resolved)?;
    for line in &outcome.summary {
        println!("{line}");
    }
    for path in outcome.outputs.commit(&resolved.out_dir())? {
        println!("wrote {path}");
    }
    match outcome.failure {
        Some(msg) => Err(Failure::Numerical(anyhow::anyhow!(msg))),
        None => Ok(()),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error());
            ExitCode::from(f.code())
        }
    }
}
