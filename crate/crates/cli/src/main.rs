//! `shotcap`: annotation checks, dataset statistics, tactic curves,
//! synthetic corpora, and caption model training and evaluation.

mod commands;
mod config;
mod data;
mod error;
mod output;

use clap::{Parser, Subcommand};
use commands::{CaptionArgs, EvalArgs, SynthArgs, TrainArgs};
use config::RunConfig;
use data::SplitName;
use error::CliError;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "shotcap", version, about = "Badminton shot captioning toolkit")]
struct Cli {
    /// JSON run configuration (may include other files).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for splitting, initialization and shuffling; required by train and eval.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Corpus root with annotations/, modalities/, clips/ and vocab.json.
    #[arg(long, global = true)]
    data: Option<PathBuf>,
    /// Annotation directory, overriding the one under the corpus root.
    #[arg(long, global = true)]
    annotations: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check annotation files against the frame-level rules.
    Validate,
    /// Dataset statistics table.
    Stats {
        #[arg(long, default_value_t = 20)]
        top_words: usize,
    },
    /// Tactic pattern occurrences and intensity curves per match.
    Tactics,
    /// Write a synthetic corpus (or the statistics fixture with --mirror).
    Synth {
        #[arg(long)]
        samples: Option<usize>,
        #[arg(long)]
        frame_size: Option<usize>,
        #[arg(long)]
        mirror: bool,
    },
    /// Train the caption model; keeps the checkpoint with the lowest validation loss.
    Train {
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        max_steps: Option<usize>,
    },
    /// Score generated captions on a split.
    Eval {
        /// Defaults to best.ckpt in the output directory.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = SplitName::Test)]
        split: SplitName,
        /// Score the reference captions against themselves.
        #[arg(long)]
        self_reference: bool,
    },
    /// Caption one hit.
    Caption {
        /// Defaults to best.ckpt in the output directory.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        rally: String,
        #[arg(long)]
        hit: usize,
        #[arg(long)]
        json: bool,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut cfg = RunConfig::load(cli.config.as_deref())?;
    if cli.seed.is_some() {
        cfg.seed = cli.seed;
    }
    if cli.out.is_some() {
        cfg.paths.out = cli.out;
    }
    if cli.data.is_some() {
        cfg.paths.data = cli.data;
    }
    if cli.annotations.is_some() {
        cfg.paths.annotations = cli.annotations;
    }
    match cli.command {
        Command::Validate => commands::validate(&cfg),
        Command::Stats { top_words } => commands::stats(&cfg, top_words),
        Command::Tactics => commands::tactics(&cfg),
        Command::Synth {
            samples,
            frame_size,
            mirror,
        } => commands::synth(
            &cfg,
            &SynthArgs {
                samples,
                frame_size,
                mirror,
            },
        ),
        Command::Train { epochs, max_steps } => {
            commands::train(&cfg, &TrainArgs { epochs, max_steps })
        }
        Command::Eval {
            checkpoint,
            split,
            self_reference,
        } => commands::eval(
            &cfg,
            &EvalArgs {
                checkpoint,
                split,
                self_reference,
            },
        ),
        Command::Caption {
            checkpoint,
            rally,
            hit,
            json,
        } => commands::caption(
            &cfg,
            &CaptionArgs {
                checkpoint,
                rally,
                hit,
                json,
            },
        ),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
