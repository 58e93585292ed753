//! `lvm`: train, evaluate, inspect and plot latent-imagination driving agents.

mod commands;
mod plot;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "lvm", version, about = "Latent-model lane keeping: training and analysis")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Options shared by every command that builds a run configuration.
#[derive(Args, Clone, Debug, Default)]
pub struct ConfigArgs {
    /// Flat `key=value` configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Train a single critic instead of the clipped pair.
    #[arg(long)]
    pub single_critic: bool,
    /// Output directory (defaults to `$LVM_OUT`, then `runs`).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Extra `key=value` overrides, applied after the file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Pretrain, then alternate model/policy updates and data collection.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Continue from `<out>/checkpoint` instead of starting fresh.
        #[arg(long)]
        resume: bool,
    },
    /// Greedy evaluation of a checkpoint.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 20)]
        episodes: usize,
        /// Evaluation seed (defaults to the run seed).
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory for the per-episode CSV.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Real and reconstructed frames of one stored episode, side by side.
    Reconstruct {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        episode: PathBuf,
        /// PNG file to write.
        #[arg(long)]
        output: PathBuf,
        #[arg(long, default_value_t = 8)]
        frames: usize,
    },
    /// Learning curves (eval_return against env_steps) as SVG.
    Plot {
        /// Metrics files, optionally prefixed `LABEL=`; files sharing a
        /// label are drawn as one mean curve with a min/max band.
        #[arg(required = true)]
        csvs: Vec<String>,
        #[arg(long)]
        output: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train { cfg, resume } => commands::train(&cfg, resume),
        Command::Eval {
            checkpoint,
            episodes,
            seed,
            out,
        } => commands::eval(&checkpoint, episodes, seed, out),
        Command::Reconstruct {
            checkpoint,
            episode,
            output,
            frames,
        } => commands::reconstruct(&checkpoint, &episode, &output, frames),
        Command::Plot { csvs, output } => plot::run(&csvs, &output),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
