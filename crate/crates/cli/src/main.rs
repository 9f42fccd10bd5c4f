mod commands;
mod config;
mod error;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use qtebounds::dataset::Arm;

use crate::commands::Figure;
use crate::config::{Overrides, RunConfig, SolverChoice};
use crate::error::CliError;

/// Bounds on counterfactual distributions and treatment effects with an
/// endogenous binary treatment and a multi-valued instrument.
#[derive(Debug, Parser)]
#[command(name = "qtebounds", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// JSON run configuration; flags override its values.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// CSV file with columns y, d, z.
    #[arg(long, global = true, value_name = "PATH")]
    input: Option<PathBuf>,

    /// Output directory.
    #[arg(long, global = true, value_name = "DIR")]
    output: Option<PathBuf>,

    #[arg(long, global = true, value_enum)]
    solver: Option<SolverChoice>,

    /// Number of evaluation-grid points.
    #[arg(long, global = true, value_name = "N")]
    grid: Option<usize>,

    /// Comma-separated quantile levels.
    #[arg(long, global = true, value_delimiter = ',', value_name = "LIST")]
    tau: Option<Vec<f64>>,

    /// Bernstein sieve order.
    #[arg(long = "J", global = true, value_name = "N")]
    order: Option<usize>,

    #[arg(long, global = true, value_parser = parse_arm)]
    arm: Option<Arm>,

    /// Use the analytic population model of the configured process.
    #[arg(long, global = true)]
    population: bool,

    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,

    /// Number of instrument levels of the simulated process.
    #[arg(long, global = true, value_name = "N")]
    levels: Option<usize>,

    /// Sample size of the simulated process.
    #[arg(long, global = true, value_name = "N")]
    n: Option<usize>,

    /// Overwrite existing output files.
    #[arg(long, global = true)]
    force: bool,

    /// Drop the unit-mass constraint from the sieve program.
    #[arg(long, global = true)]
    no_mass_constraint: bool,

    /// Loosen every constraint of the sampled program by EPS
    #[arg(long, global = true, value_name = "EPS")]
    slack: Option<f64>,
}

fn parse_arm(s: &str) -> Result<Arm, String> {
    s.parse().map_err(|e: qtebounds::Error| e.to_string())
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Draw a sample from the data-generating process.
    Simulate,
    /// Estimate the probability objects and write them as JSON.
    Estimate,
    /// Bound the counterfactual CDF and summarize QTE and ATE bounds.
    Bounds,
    /// Quantile and average treatment effect bounds only.
    Qte,
    /// Complier distributions with the dominance and point-identification checks.
    Diagnose,
    /// Violation-probability experiment for the sampled program.
    Violation,
    /// Curve bundles for the population figures.
    Reproduce {
        #[arg(value_enum, ignore_case = true)]
        figure: Figure,
    },
}

fn run(cli: Cli) -> Result<Option<String>, CliError> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    cfg.apply(Overrides {
        input: cli.input,
        output: cli.output,
        solver: cli.solver,
        grid: cli.grid,
        tau: cli.tau,
        order: cli.order,
        arm: cli.arm,
        population: cli.population,
        seed: cli.seed,
        levels: cli.levels,
        n: cli.n,
        no_mass_constraint: cli.no_mass_constraint,
        slack: cli.slack,
    });
    cfg.validate()?;
    let force = cli.force;
    match cli.command {
        Command::Simulate => commands::simulate(&cfg, force),
        Command::Estimate => commands::estimate_cmd(&cfg, force),
        Command::Bounds => commands::bounds(&cfg, force),
        Command::Qte => commands::qte(&cfg, force),
        Command::Diagnose => commands::diagnose(&cfg, force),
        Command::Violation => commands::violation(&cfg, force),
        Command::Reproduce { figure } => commands::reproduce(&cfg, figure, force),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(None) => ExitCode::SUCCESS,
        Ok(Some(finding)) => {
            eprintln!("finding: {finding}");
            ExitCode::from(3)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
