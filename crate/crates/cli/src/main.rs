use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use mtfer_cli::commands::{self, EvalArgs, PredictArgs, PreprocessArgs, TrainArgs};

/// Train and run a multi-task facial attribute classifier.
#[derive(Parser)]
#[command(name = "mtfer", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train from a JSON run configuration.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Output directory; overrides `output_dir` in the configuration.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Seed for both initialization and training.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Print per-head accuracy and loss of a checkpoint on a dataset.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// A cache file, a FER-style CSV or a RAF-DB root directory.
        #[arg(long)]
        dataset: PathBuf,
        /// Run configuration the checkpoint must match.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "eval.json")]
        out: PathBuf,
    },
    /// Classify one PGM or PPM image.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        image: PathBuf,
        /// Eye centres as lx,ly,rx,ry; without them no rotation is applied.
        #[arg(long, allow_hyphen_values = true)]
        eyes: Option<String>,
    },
    /// Draw emotion accuracy and loss curves from a metrics CSV.
    Plot {
        #[arg(long)]
        metrics: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Ingest a dataset into the binary cache format.
    Preprocess {
        #[arg(long)]
        dataset: PathBuf,
        /// Eye landmark CSV for RAF-DB; defaults to landmarks.csv under the root.
        #[arg(long)]
        landmarks: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Train { config, out, seed } => commands::train(&TrainArgs {
            config,
            out: out.as_deref(),
            seed: *seed,
        }),
        Command::Eval {
            checkpoint,
            dataset,
            config,
            out,
        } => commands::eval(&EvalArgs {
            checkpoint,
            dataset,
            config: config.as_deref(),
            out,
        }),
        Command::Predict { checkpoint, image, eyes } => commands::predict(&PredictArgs {
            checkpoint,
            image,
            eyes: eyes.as_deref(),
        }),
        Command::Plot { metrics, out } => commands::plot(metrics, out),
        Command::Preprocess { dataset, landmarks, out } => commands::preprocess_dataset(&PreprocessArgs {
            dataset,
            landmarks: landmarks.as_deref(),
            out,
        }),
    };
    match result {
        Ok(text) => {
            print!("{text}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code)
        }
    }
}
