use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use eggscan_cli::commands::{self, Stage};
use eggscan_core::Error;

/// Two-stage parasitic egg detection and classification pipeline.
#[derive(Parser)]
#[command(name = "eggscan", version, about)]
struct Cli {
    /// Run config JSON (required by split/train/predict/evaluate).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Override a config field by dotted path, e.g. --set detector.epochs=5.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Load the dataset and write train/val/test manifests.
    Split,
    /// Train the detector, the SVM, or both.
    Train {
        #[arg(long, value_enum, default_value = "all")]
        stage: Stage,
    },
    /// Run the fused pipeline over an image file or directory.
    Predict {
        /// Image file or directory of images.
        #[arg(long)]
        input: PathBuf,
        /// Output predictions file (default: <output_dir>/predictions.json).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Exit nonzero when any input file fails to load.
        #[arg(long)]
        fail_on_error: bool,
    },
    /// Match predictions against ground truth and write report + plots.
    Evaluate {
        /// Predictions file (default: <output_dir>/predictions.json).
        #[arg(long)]
        predictions: Option<PathBuf>,
        /// Ground-truth annotation file (default: config annotations path).
        #[arg(long)]
        ground_truth: Option<PathBuf>,
        /// Report directory (default: <output_dir>/report).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Restrict ground truth to one split manifest (train/val/test).
        #[arg(long)]
        split: Option<String>,
    },
    /// Generate a synthetic dataset.
    Synth {
        /// Key-value params file (image_size, per_class_count, noise_sigma, seed).
        #[arg(long)]
        params: Option<PathBuf>,
        /// Output dataset directory.
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> eggscan_core::Result<()> {
    let load_config = |cli: &Cli| -> eggscan_core::Result<_> {
        let path = cli.config.as_deref().ok_or_else(|| {
            Error::Config("this command requires --config <run-config.json>".to_string())
        })?;
        commands::load_effective_config(path, cli.seed, &cli.set)
    };
    match &cli.command {
        Command::Split => commands::cmd_split(&load_config(&cli)?),
        Command::Train { stage } => commands::cmd_train(&load_config(&cli)?, *stage),
        Command::Predict {
            input,
            out,
            fail_on_error,
        } => commands::cmd_predict(&load_config(&cli)?, input, out.as_deref(), *fail_on_error)
            .map(|_| ()),
        Command::Evaluate {
            predictions,
            ground_truth,
            out,
            split,
        } => commands::cmd_evaluate(
            &load_config(&cli)?,
            predictions.as_deref(),
            ground_truth.as_deref(),
            out.as_deref(),
            split.as_deref(),
        )
        .map(|_| ()),
        Command::Synth { params, out } => commands::cmd_synth(params.as_deref(), out, cli.seed),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            // 2 for config/validation problems, 1 for runtime failures.
            if e.is_validation() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
