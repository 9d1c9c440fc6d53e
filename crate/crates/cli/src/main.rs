//! `tvseg`: synthetic data, sparse label sampling, training, prediction,
//! MRF smoothing, evaluation, the multi-trial experiment and gradient checks.
//!
//! Exit codes: 0 success, 1 invalid input or configuration, 2 numerical
//! failure (non-finite loss or a failed check), 3 I/O error.

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "tvseg", version, about = "Semi-supervised pixel classification with a total-variation loss")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic train/test dataset.
    Synth {
        /// JSON config; see `SynthJob`.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        train_images: Option<usize>,
        #[arg(long)]
        test_images: Option<usize>,
    },
    /// Draw `n` labeled pixels per image of a dataset directory.
    Sample {
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a network from a dataset directory and a sparse label CSV.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        sparse: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        iterations: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
    },
    /// Per-class probability PGMs and the argmax label PGM for one image.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        out_prefix: PathBuf,
    },
    /// ICM smoothing of `<stem>.class<k>.pgm` probability maps.
    Mrf {
        #[arg(long)]
        probs: PathBuf,
        #[arg(long)]
        beta: f64,
        #[arg(long, default_value_t = 20)]
        max_iters: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Pixel errors of `<stem>.labels.pgm` predictions against a truth directory.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// The multi-trial sparse-label experiment.
    Experiment {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Suppress per-trial progress on stderr.
        #[arg(long)]
        quiet: bool,
    },
    /// Finite-difference and adjoint verification suites.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Optional manifest path.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match commands::run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_io() {
                3
            } else if e.is_numerical() {
                2
            } else {
                1
            })
        }
    }
}
