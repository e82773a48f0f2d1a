use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use nshrink::commands::{self, DespeckleArgs};
use nshrink::config::{Overrides, Settings, UsageError};

/// Wavelet-domain speckle reduction with classical and learned shrinkage.
#[derive(Debug, Parser)]
#[command(name = "nshrink", version)]
struct Cli {
    #[command(flatten)]
    overrides: Overrides,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Multiply a clean image by simulated speckle.
    Simulate {
        /// Clean image (PGM or F64).
        input: PathBuf,
    },
    /// Run one filter over a speckled image.
    Despeckle {
        input: PathBuf,
        #[arg(long)]
        filter: String,
        /// Clean reference; enables the metrics report.
        #[arg(long)]
        clean: Option<PathBuf>,
        /// Trained model for neuralshrink.
        #[arg(long)]
        model: Option<PathBuf>,
        /// Also write the shrunk wavelet coefficients to this directory.
        #[arg(long)]
        coeffs_dir: Option<PathBuf>,
    },
    /// Train the neural shrinker on clean images with simulated speckle.
    Train {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
    },
    /// Compare several filters on one speckled image.
    Bench {
        input: PathBuf,
        #[arg(long)]
        clean: Option<PathBuf>,
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Assess a filtered image against the speckled input.
    Metrics {
        #[arg(long)]
        noisy: PathBuf,
        #[arg(long)]
        candidate: PathBuf,
        #[arg(long)]
        clean: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let s = Settings::resolve(&cli.overrides)?;
    match &cli.command {
        Command::Simulate { input } => commands::simulate(&s, input),
        Command::Despeckle { input, filter, clean, model, coeffs_dir } => commands::despeckle(
            &s,
            &DespeckleArgs {
                input,
                filter,
                clean: clean.as_deref(),
                model: model.as_deref(),
                coeffs_dir: coeffs_dir.as_deref(),
            },
        )
        .map(drop),
        Command::Train { inputs } => commands::train_command(&s, inputs).map(drop),
        Command::Bench { input, clean, model } => commands::bench(&s, input, clean.as_deref(), model.as_deref()).map(drop),
        Command::Metrics { noisy, candidate, clean } => {
            commands::metrics_command(&s, noisy, candidate, clean.as_deref()).map(drop)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
