use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use enki_cli::{config, run_experiment, ExperimentKind, HarnessError};

/// Ensemble Kalman inversion experiment runner.
#[derive(Parser)]
#[command(name = "enki", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a config file.
    Run { config: PathBuf },
    /// Check a config file without running anything.
    Validate { config: PathBuf },
    /// List the available experiments.
    ListExperiments,
}

fn main() -> ExitCode {
    match Cli::parse().command {
        Command::Run { config } => {
            let mut cfg = match config::load_config(&config) {
                Ok(cfg) => cfg,
                Err(e) => {
                    eprintln!("{e}");
                    return ExitCode::from(1);
                }
            };
            if let Some(dir) = std::env::var_os("ENKI_OUTPUT_DIR") {
                cfg.output_dir = PathBuf::from(dir);
            }
            match run_experiment(&cfg) {
                Ok(bundle) => {
                    println!("experiment: {}", cfg.experiment.name());
                    println!("output: {}", bundle.output_dir.display());
                    for (k, v) in &bundle.summary {
                        println!("{k} = {v}");
                    }
                    ExitCode::SUCCESS
                }
                Err(HarnessError::Validation(e)) => {
                    eprintln!("{e}");
                    ExitCode::from(1)
                }
                Err(e) => {
                    eprintln!("{e}");
                    ExitCode::from(2)
                }
            }
        }
        Command::Validate { config } => match config::load_config(&config) {
            Ok(cfg) => {
                println!("ok: {} experiment", cfg.experiment.name());
                ExitCode::SUCCESS
            }
            Err(e) => {
                eprintln!("{e}");
                ExitCode::from(1)
            }
        },
        Command::ListExperiments => {
            for kind in ExperimentKind::ALL {
                println!("{:20} {}", kind.name(), kind.describe());
            }
            ExitCode::SUCCESS
        }
    }
}
