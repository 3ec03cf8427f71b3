//! `htt`: synthesize data, train, evaluate, infer and dump attention maps.
//!
//! Exit codes: 0 success, 2 config error, 3 data error, 4 shape or
//! compatibility error.

mod commands;
mod run_config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use htt_core::HttError;

/// Environment variable naming the default output directory.
pub const OUTPUT_DIR_ENV: &str = "HTT_OUTPUT_DIR";

#[derive(Parser)]
#[command(name = "htt", version, about = "Hand pose and action transformer toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset from a `key = value` spec file.
    Synth {
        #[arg(long)]
        spec: PathBuf,
        /// Output directory (defaults to $HTT_OUTPUT_DIR, then `htt-out`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train from a run config, checkpointing after every epoch.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Continue from the checkpoint in the output directory.
        #[arg(long)]
        resume: bool,
        /// Stop after this many epochs in this invocation.
        #[arg(long)]
        stop_after: Option<usize>,
    },
    /// Score a checkpoint on a dataset manifest.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Export attention weights of every clip of one sequence.
    AttnDump {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        sequence: PathBuf,
        /// `pose`, `action`, `alpha` or `all`, optionally suffixed with
        /// `:<layer>` or `:last`.
        #[arg(long, default_value = "alpha")]
        select: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Predict poses, objects and the action of one sequence.
    Infer {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        sequence: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn exit_code(e: &HttError) -> u8 {
    match e {
        HttError::Config(_) | HttError::Invalid(_) => 2,
        HttError::Data(_) | HttError::Io { .. } => 3,
        HttError::Shape(_) | HttError::Compat(_) => 4,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth { spec, out } => commands::synth(&spec, out),
        Command::Train {
            config,
            out,
            resume,
            stop_after,
        } => commands::train(&config, out, resume, stop_after),
        Command::Eval { checkpoint, data, out } => commands::eval(&checkpoint, &data, out),
        Command::AttnDump {
            checkpoint,
            sequence,
            select,
            out,
        } => commands::attn_dump(&checkpoint, &sequence, &select, out),
        Command::Infer { checkpoint, sequence, out } => commands::infer(&checkpoint, &sequence, out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("htt: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
