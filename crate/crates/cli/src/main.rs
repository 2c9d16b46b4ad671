//! `mmtl`: train, evaluate, benchmark and run the multi-task sensor model.

mod commands;
mod config;
mod error;
mod infer;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use mmtl_core::data::DatasetKind;

#[derive(Debug, Parser)]
#[command(
    name = "mmtl",
    version,
    about = "Activity recognition and resistance estimation from wearable IMU windows"
)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
pub struct Global {
    /// Run configuration (JSON).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides `train.seed`.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Suppress progress and warnings on stderr.
    #[arg(long, global = true)]
    pub quiet: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Summarize a dataset: window counts, class histogram, subjects.
    DataInspect {
        #[arg(long)]
        dataset: Option<DatasetKind>,
        #[arg(long)]
        root: Option<PathBuf>,
    },
    /// Train and write a checkpoint plus a JSON-lines epoch log.
    Train {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Epoch log; defaults to the checkpoint path with a `.jsonl` extension.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Print a metrics report for one split.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_enum, default_value = "test")]
        split: Split,
    },
    /// Batch-1 latency and throughput.
    Bench {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        runs: Option<usize>,
        #[arg(long)]
        warmup: Option<usize>,
    },
    /// Predict over CSV rows (`timestamp,<channel>...`), one JSON line per window.
    Infer {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, conflicts_with = "stream", required_unless_present = "stream")]
        input: Option<PathBuf>,
        /// Read rows from standard input and predict as windows fill.
        #[arg(long)]
        stream: bool,
    },
    /// Train the full model and its four single-component ablations.
    Ablate {
        /// Also write the table as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let g = &cli.global;
    let result = match cli.command {
        Command::DataInspect { dataset, root } => commands::data_inspect(g, dataset, root),
        Command::Train { out, resume, log } => commands::train(g, &out, resume.as_deref(), log),
        Command::Eval { checkpoint, split } => commands::eval(g, &checkpoint, split),
        Command::Bench {
            checkpoint,
            runs,
            warmup,
        } => commands::bench(g, &checkpoint, runs, warmup),
        Command::Infer {
            checkpoint,
            input,
            stream: _,
        } => infer::run(g, &checkpoint, input.as_deref()),
        Command::Ablate { csv } => commands::ablate(g, csv.as_deref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
