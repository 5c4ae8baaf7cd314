//! `tpgen` — train, sample, in-paint and evaluate the targetprop generative model.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;

#[derive(Parser, Debug)]
#[command(name = "tpgen", version, about)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by every command. Precedence: built-in defaults, then the
/// `--config` file, then `--set` overrides in order, then `--seed`/`--threads`.
#[derive(Args, Debug, Clone)]
pub struct Common {
    /// `key = value` configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (created if missing).
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Worker threads; results do not depend on this.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Override one configuration key, e.g. `--set train.epochs=5`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a model, fit its top-level prior and write `model.ckpt` and `metrics.csv`.
    Train,
    /// Draw samples from a checkpoint; writes `samples.pgm` and `samples.bin`.
    Generate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        count: Option<usize>,
        /// `directed`, `refine` or `chain`.
        #[arg(long)]
        mode: Option<String>,
    },
    /// Fill in randomly hidden pixels of test images; writes `inpaint.pgm` and `inpaint_mse.csv`.
    Inpaint {
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Parzen-window log-likelihood of the test set under a sample file; writes `parzen.csv`.
    EvalParzen {
        #[arg(long)]
        samples: PathBuf,
        /// Fixed bandwidth; skips validation-set selection.
        #[arg(long)]
        sigma: Option<f64>,
    },
    /// Simulated spike-timing weight changes; writes `stdp.csv`.
    StdpCurve,
    /// Mean joint log-likelihood over inference steps on test images; writes `trace.csv`.
    InferTrace {
        #[arg(long)]
        checkpoint: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(&cli.common, &cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
