//! `docie`: corpus tools, training, inference, evaluation and KB alignment.
//!
//! Exit status is 0 on success, 2 on usage or validation errors and 1 on
//! any other failure.

mod commands;
mod config;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use docie_core::{DiagnoseMode, ReportFormat};

use crate::config::Preset;

/// Bad invocation or invalid input; exits with status 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

#[derive(Debug, Parser)]
#[command(name = "docie", version, about = "Document-level information extraction for scientific articles")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Master seed; every stochastic stage derives its seed from it.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Report format.
    #[arg(long, global = true, value_parser = parse_format)]
    pub format: Option<ReportFormat>,
    /// Worker threads for document-level parallelism.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
}

fn parse_format(s: &str) -> Result<ReportFormat, String> {
    s.parse().map_err(|e: docie_core::Error| e.to_string())
}

fn parse_mode(s: &str) -> Result<DiagnoseMode, String> {
    s.parse().map_err(|e: docie_core::Error| e.to_string())
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Normalize a corpus (native or release schema) into the native schema.
    Ingest {
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        output: Option<PathBuf>,
        /// Keep the longer of two overlapping mentions instead of rejecting.
        #[arg(long)]
        drop_overlaps: bool,
        /// Leave section boundaries unsnapped; misaligned sections are then errors.
        #[arg(long)]
        no_snap: bool,
    },
    /// Per-document corpus statistics.
    Stats {
        #[arg(long)]
        corpus: Option<PathBuf>,
    },
    /// Generate a synthetic corpus.
    Synth {
        #[arg(long)]
        output: Option<PathBuf>,
        #[arg(long)]
        documents: Option<usize>,
        /// Use the noisy generator settings.
        #[arg(long)]
        noisy: bool,
        /// Also write train/dev/test splits into this directory.
        #[arg(long)]
        split_dir: Option<PathBuf>,
    },
    /// Train the joint model and write a checkpoint directory.
    Train {
        /// Corpus to split into train and dev.
        #[arg(long)]
        corpus: Option<PathBuf>,
        /// Training documents; use instead of --corpus.
        #[arg(long, conflicts_with = "corpus")]
        train: Option<PathBuf>,
        #[arg(long, requires = "train")]
        dev: Option<PathBuf>,
        /// Checkpoint directory.
        #[arg(long)]
        output: Option<PathBuf>,
        #[arg(long, value_enum)]
        preset: Option<Preset>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        patience: Option<usize>,
    },
    /// Run the end-to-end cascade and write predicted documents.
    Predict {
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Score predicted documents against gold.
    Evaluate {
        #[arg(long)]
        gold: Option<PathBuf>,
        #[arg(long)]
        pred: Option<PathBuf>,
    },
    /// Evaluate a model under one of the diagnostic regimes.
    Diagnose {
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        corpus: Option<PathBuf>,
        /// component-gold, end-to-end or gold-salient-clusters.
        #[arg(long, value_parser = parse_mode, default_value = "end-to-end")]
        mode: DiagnoseMode,
    },
    /// Link mentions to knowledge-base entity names.
    Align {
        #[arg(long)]
        corpus: Option<PathBuf>,
        /// JSON-lines knowledge-base result records.
        #[arg(long)]
        kb: Option<PathBuf>,
        /// Hand-linked documents for threshold selection.
        #[arg(long)]
        labeled: Option<PathBuf>,
        /// Corrected version of the corpus, for correction statistics.
        #[arg(long)]
        corrected: Option<PathBuf>,
        #[arg(long)]
        epsilon: Option<f64>,
        /// Link decisions as JSON lines.
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

fn exit_status(err: &anyhow::Error) -> u8 {
    use docie_core::Error as E;
    if err.downcast_ref::<UsageError>().is_some() {
        return 2;
    }
    match err.downcast_ref::<E>() {
        Some(E::Config(_) | E::Validation { .. } | E::Parse { .. } | E::InvalidTags { .. } | E::LengthMismatch { .. }) => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(report) => {
            print!("{report}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_status(&e))
        }
    }
}
