mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use neighboredit::evaluation::ScatterMode;

use commands::{AnalyzeArgs, EvaluateArgs, GenerateArgs, InitMode};
use config::{RunConfig, Split};

#[derive(Parser)]
#[command(name = "neighboredit", version, about = "Retrieval-initialized edit-based translation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// TOML run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Dotted override applied to the configuration, e.g. `train.max_steps=100`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum ModeArg {
    TargetTfidf,
    SourceTableMatch,
}

#[derive(Subcommand)]
enum Command {
    /// Build the vocabulary and the retrieval datastore over the training corpus.
    BuildDatastore {
        #[command(flatten)]
        common: Common,
    },
    /// Write the nearest training neighbor of every sentence in a split.
    Retrieve {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value = "test")]
        split: Split,
    },
    Train {
        #[command(flatten)]
        common: Common,
    },
    /// Decode a split with a checkpoint.
    Generate {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value = "test")]
        split: Split,
        #[arg(long, value_enum, default_value = "neighbor")]
        init: InitMode,
        /// Defaults to `<work_dir>/checkpoints/best`.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Defaults to `<work_dir>/outputs/<split>.<init>.txt`.
        #[arg(long)]
        output: Option<PathBuf>,
        /// Per-sentence JSON lines with canvases, iterations and latency.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Score hypotheses against references.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        hyps: PathBuf,
        /// Defaults to the test split's target file.
        #[arg(long)]
        refs: Option<PathBuf>,
        /// Second system for the paired bootstrap test.
        #[arg(long)]
        hyps_b: Option<PathBuf>,
        /// Trace file from `generate`, for iteration and latency means.
        #[arg(long)]
        trace: Option<PathBuf>,
        #[arg(long, default_value_t = 1000)]
        bootstrap_samples: usize,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Neighbor similarity against sentence BLEU, one JSON line per sentence plus a summary.
    Analyze {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value = "test")]
        split: Split,
        #[arg(long)]
        hyps: PathBuf,
        #[arg(long, value_enum, default_value = "target-tfidf")]
        mode: ModeArg,
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

fn init_threads() -> Result<()> {
    let Ok(v) = std::env::var("NEIGHBOREDIT_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .with_context(|| format!("NEIGHBOREDIT_THREADS must be a positive integer, got {v:?}"))?;
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    init_threads()?;
    let load = |c: &Common| RunConfig::load(&c.config, &c.overrides);
    match cli.command {
        Command::BuildDatastore { common } => commands::build_datastore_cmd(&load(&common)?),
        Command::Retrieve { common, split } => commands::retrieve_cmd(&load(&common)?, split),
        Command::Train { common } => commands::train_cmd(&load(&common)?),
        Command::Generate { common, split, init, checkpoint, output, trace } => commands::generate_cmd(
            &load(&common)?,
            &GenerateArgs { split, init, checkpoint, output, trace },
        ),
        Command::Evaluate { common, hyps, refs, hyps_b, trace, bootstrap_samples, output } => commands::evaluate_cmd(
            &load(&common)?,
            &EvaluateArgs { hyps, refs, hyps_b, trace, bootstrap_samples, output },
        ),
        Command::Analyze { common, split, hyps, mode, output } => {
            let mode = match mode {
                ModeArg::TargetTfidf => ScatterMode::TargetTfidf,
                ModeArg::SourceTableMatch => ScatterMode::SourceTableMatch,
            };
            commands::analyze_cmd(&load(&common)?, &AnalyzeArgs { split, hyps, mode, output })
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
