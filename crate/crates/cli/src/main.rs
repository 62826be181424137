//! `d2t` — command-line front end for the table-to-text toolkit.
//!
//! One binary, one subcommand per pipeline stage:
//!
//! ```text
//! d2t build-index corpus.jsonl --out index.tsv
//! d2t label corpus.jsonl --index index.tsv --out labels.txt
//! d2t filter corpus.jsonl --index index.tsv --out filtered.jsonl
//! d2t train corpus.jsonl --index index.tsv --config run.cfg --out model.ckpt
//! d2t generate corpus.jsonl --model model.ckpt --weights 0.5,0,0.5 --out preds.txt
//! d2t evaluate preds.txt --corpus corpus.jsonl --index index.tsv --out report.tsv
//! d2t sweep corpus.jsonl --model model.ckpt --index index.tsv --out sweep.tsv
//! ```
//!
//! Every command writes its primary output to `--out` plus a JSON manifest at
//! `<out>.manifest.json` recording the exact command, the resolved
//! configuration, the seed, and checksums of all inputs and outputs. Re-running
//! a command on identical inputs reproduces the outputs byte for byte; the
//! manifest differs only in its timestamp. Progress goes to stderr, results go
//! to files, and stdout stays empty.
//!
//! Exit codes: 0 on success, 2 when an input file does not exist, 1 for every
//! other error.

mod commands;
mod context;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use d2t_core::corpus::Split;
use d2t_core::mbd::BranchWeights;

use crate::commands::DecodeFlags;
use crate::context::{CliError, Ctx};

#[derive(Parser)]
#[command(name = "d2t", version, about = "Table-to-text pipeline: label, filter, train, generate, evaluate")]
struct Cli {
    /// Configuration file (`key = value` lines); missing keys keep defaults.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Overrides the configured model seed and shuffle seed.
    #[arg(long, global = true, value_name = "INT")]
    seed: Option<u64>,
    /// Worker threads for index building.
    #[arg(long, global = true, value_name = "INT", default_value_t = 1)]
    threads: usize,
    /// Primary output path; the manifest lands at `<out>.manifest.json`.
    #[arg(long, global = true, value_name = "PATH")]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Count word/pair co-occurrences over a training corpus.
    BuildIndex {
        /// Training corpus in canonical one-instance-per-line format.
        corpus: PathBuf,
    },
    /// Score and label every reference token of a corpus.
    Label {
        corpus: PathBuf,
        /// Co-occurrence index produced by `build-index`.
        #[arg(long, value_name = "PATH")]
        index: PathBuf,
        /// Split tag under which to load the corpus.
        #[arg(long, default_value = "train")]
        split: Split,
    },
    /// Remove label-0 tokens from every reference and drop emptied instances.
    Filter {
        corpus: PathBuf,
        #[arg(long, value_name = "PATH")]
        index: PathBuf,
    },
    /// Train the multi-branch model on a labeled corpus.
    Train {
        corpus: PathBuf,
        #[arg(long, value_name = "PATH")]
        index: PathBuf,
    },
    /// Decode one sequence per table with fixed branch weights.
    Generate {
        /// Corpus supplying the input tables (references are ignored).
        corpus: PathBuf,
        /// Model checkpoint produced by `train`.
        #[arg(long, value_name = "PATH")]
        model: PathBuf,
        /// Branch weights `content,hallucination,fluency`; must sum to 1.
        #[arg(long, value_parser = parse_weights, default_value = "0.5,0.0,0.5")]
        weights: BranchWeights,
        /// Beam width (1 = greedy).
        #[arg(long, default_value_t = 4)]
        beam: usize,
        /// Maximum output length in tokens.
        #[arg(long, default_value_t = 40)]
        max_len: usize,
    },
    /// Score predictions against a reference corpus.
    Evaluate {
        /// Predictions file from `generate` (`id<TAB>tokens`).
        predictions: PathBuf,
        /// Corpus with the reference sentences and tables.
        #[arg(long, value_name = "PATH")]
        corpus: PathBuf,
        #[arg(long, value_name = "PATH")]
        index: PathBuf,
        /// Optional corpus-format file giving full parses of the predictions
        /// (matched by instance id). Without it, predictions are labeled with
        /// a flat single-statement parse and parts of speech looked up from
        /// the reference corpus.
        #[arg(long, value_name = "PATH")]
        parses: Option<PathBuf>,
    },
    /// Generate and evaluate under a grid of branch-weight settings.
    Sweep {
        corpus: PathBuf,
        #[arg(long, value_name = "PATH")]
        model: PathBuf,
        #[arg(long, value_name = "PATH")]
        index: PathBuf,
        #[arg(long, default_value_t = 4)]
        beam: usize,
        #[arg(long, default_value_t = 40)]
        max_len: usize,
    },
}

fn parse_weights(text: &str) -> Result<BranchWeights, String> {
    let parts: Vec<&str> = text.split(',').collect();
    if parts.len() != 3 {
        return Err(format!("expected three comma-separated weights, got `{text}`"));
    }
    let mut raw = [0.0f64; 3];
    for (slot, part) in raw.iter_mut().zip(&parts) {
        *slot = part.trim().parse().map_err(|_| format!("bad weight `{}`", part.trim()))?;
    }
    BranchWeights::new(raw).map_err(|e| e.to_string())
}

fn run(cli: Cli) -> Result<(), CliError> {
    let argv: Vec<String> = std::env::args().collect();
    let mut ctx = Ctx::new(cli.config.as_deref(), cli.seed, cli.threads, cli.out, argv)?;
    match cli.command {
        Command::BuildIndex { corpus } => commands::build_index(&mut ctx, &corpus),
        Command::Label { corpus, index, split } => commands::label(&mut ctx, &corpus, &index, split),
        Command::Filter { corpus, index } => commands::filter(&mut ctx, &corpus, &index),
        Command::Train { corpus, index } => commands::train(&mut ctx, &corpus, &index),
        Command::Generate { corpus, model, weights, beam, max_len } => {
            commands::generate(&mut ctx, &corpus, &model, weights, DecodeFlags { beam, max_len })
        }
        Command::Evaluate { predictions, corpus, index, parses } => {
            commands::evaluate(&mut ctx, &predictions, &corpus, &index, parses.as_deref())
        }
        Command::Sweep { corpus, model, index, beam, max_len } => {
            commands::sweep(&mut ctx, &corpus, &model, &index, DecodeFlags { beam, max_len })
        }
    }?;
    ctx.write_manifest()?;
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::MissingInput(path)) => {
            eprintln!("error: no such input: {}", path.display());
            ExitCode::from(2)
        }
        Err(CliError::Other(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
