//! Experiment driver: reproducible simulation, Lyapunov analysis, filter
//! benchmarks and bound verification over cached artifacts.

mod artifacts;
mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::ExperimentConfig;

#[derive(Parser)]
#[command(name = "unstable-lab", version, about = "Lyapunov analysis and Kalman filter benchmarks for tangent-linear Lorenz-96")]
struct Cli {
    /// JSON experiment configuration; defaults are desk scale.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override both the trajectory and design seeds.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Use reference-scale spin-ups and averaging windows.
    #[arg(long, global = true)]
    paper_scale: bool,

    /// Output directory (overrides the configured one).
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate and cache the propagator sequence.
    Simulate,
    /// Compute Lyapunov runs and the spectrum report.
    Lyapunov,
    /// Free evolution of perturbations in the stable modes.
    Psi,
    /// Observation-design benchmark over all configured cells.
    Benchmark,
    /// Criterion, sandwich and uniform-window reports.
    Bounds,
    /// Aggregate all reports and evaluate the configured assertions.
    Report,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let mut config = match &cli.config {
        Some(path) => match ExperimentConfig::load(path) {
            Ok(config) => config,
            Err(e) => {
                eprintln!("error: {e}");
                return ExitCode::FAILURE;
            }
        },
        None => ExperimentConfig::default(),
    };
    if cli.paper_scale {
        config.apply_paper_scale();
    }
    if let Some(seed) = cli.seed {
        config.apply_seed(seed);
    }
    if let Some(out) = cli.out {
        config.output_dir = out;
    }
    if let Err(e) = config.validate() {
        eprintln!("error: {e}");
        return ExitCode::FAILURE;
    }

    let result = match cli.command {
        Command::Simulate => commands::simulate::run(&config),
        Command::Lyapunov => commands::lyapunov::run(&config),
        Command::Psi => commands::psi::run(&config),
        Command::Benchmark => commands::benchmark::run(&config),
        Command::Bounds => commands::bounds::run(&config),
        Command::Report => match commands::report::run(&config) {
            Ok(required_failed) => {
                if required_failed {
                    return ExitCode::FAILURE;
                }
                Ok(())
            }
            Err(e) => Err(e),
        },
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
