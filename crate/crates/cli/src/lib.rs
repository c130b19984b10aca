//! Command-line front end: `train`, `eval`, `gradcheck` and `synth`.
//!
//! Every command writes only below its `--out` directory. Exit codes:
//! 0 success, 1 configuration or data error, 2 training divergence (and
//! for `gradcheck`, any failing check).

pub mod commands;
pub mod config;

use clap::{Parser, Subcommand};

pub use commands::{EvalArgs, GradcheckArgs, SynthArgs, TrainArgs};

pub const EXIT_OK: u8 = 0;
pub const EXIT_ERROR: u8 = 1;
pub const EXIT_DIVERGED: u8 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "caggnet",
    version,
    about = "Crossing-aggregation segmentation networks on the CPU"
)]
pub struct Cli {
    /// Worker threads for intra-op parallelism; 1 gives bit-reproducible runs.
    #[arg(long, global = true, env = "CAGGNET_THREADS")]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model from a JSON config.
    Train(TrainArgs),
    /// Score a checkpoint on a dataset.
    Eval(EvalArgs),
    /// Compare tape gradients with finite differences.
    Gradcheck(GradcheckArgs),
    /// Write a synthetic disk-segmentation dataset.
    Synth(SynthArgs),
}

pub fn run(cli: Cli) -> anyhow::Result<u8> {
    match cli.command {
        Command::Train(a) => commands::train(&a),
        Command::Eval(a) => commands::eval(&a),
        Command::Gradcheck(a) => commands::gradcheck(&a),
        Command::Synth(a) => commands::synth(&a),
    }
}
