//! `phasenet`: decomposition, training, interpolation and evaluation from the
//! command line.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "phasenet", version, about = "Phase-based video frame interpolation")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by every command. Flags override the configuration file.
#[derive(Debug, Clone, Args)]
pub struct GlobalArgs {
    /// Flat `key = value` configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Number of oriented pyramid levels.
    #[arg(long, global = true)]
    pub levels: Option<usize>,
    #[arg(long, global = true)]
    pub orientations: Option<usize>,
    #[arg(long, global = true)]
    pub scale_factor: Option<f64>,
    /// Run everything on one thread in a fixed order.
    #[arg(long, global = true)]
    pub deterministic: bool,
    /// Output file or directory, depending on the command.
    #[arg(long, short, global = true)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Method {
    Phasenet,
    Baseline,
    Average,
    Passthrough,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write subband amplitude/phase images and the serialized decomposition.
    Decompose { image: PathBuf },
    /// Synthesize the frame halfway between two frames.
    Interpolate {
        frame1: PathBuf,
        frame2: PathBuf,
        #[arg(long, value_enum, default_value = "phasenet")]
        method: Method,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Train a model on a directory of frame sequences.
    Train {
        dataset: PathBuf,
        /// Continue from a training checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Leave-one-out evaluation of one or more methods on a frame sequence.
    Eval {
        sequence: PathBuf,
        #[arg(long, value_enum, required = true)]
        method: Vec<Method>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Describe a checkpoint, container or image, or the resolved settings.
    Info { path: Option<PathBuf> },
    /// Write a synthetic translating-texture dataset.
    Synth,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = config::RunConfig::resolve(&cli.global).and_then(|cfg| {
        let out = cli.global.output.as_deref();
        match &cli.command {
            Command::Decompose { image } => commands::decompose(&cfg, image, out),
            Command::Interpolate {
                frame1,
                frame2,
                method,
                checkpoint,
            } => commands::interpolate(&cfg, frame1, frame2, *method, checkpoint.as_deref(), out),
            Command::Train { dataset, resume } => commands::train(&cfg, dataset, resume.as_deref(), out),
            Command::Eval {
                sequence,
                method,
                checkpoint,
            } => commands::eval(&cfg, sequence, method, checkpoint.as_deref(), out),
            Command::Info { path } => commands::info(&cfg, path.as_deref()),
            Command::Synth => commands::synth(&cfg, out),
        }
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
