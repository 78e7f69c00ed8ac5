//! `struchis` command-line tool.
//!
//! Exit codes: 0 success, 1 validation findings, 2 usage or config error,
//! 3 runtime abort. `STRUCHIS_THREADS` sets the worker thread count.

mod commands;
mod exit;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use struchis::graph::SplitPart;
use struchis::synth::SynthPreset;

use commands::{AblateArgs, BenchArgs, TrainArgs};

#[derive(Parser)]
#[command(name = "struchis", version, about = "Multi-task heterogeneous graph learning with selective structure sharing")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Part {
    Train,
    Val,
    Test,
}

impl From<Part> for SplitPart {
    fn from(p: Part) -> Self {
        match p {
            Part::Train => SplitPart::Train,
            Part::Val => SplitPart::Val,
            Part::Test => SplitPart::Test,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Disjoint,
    Shared,
    SingleTask,
    Sparse,
    VerySparse,
}

impl From<Preset> for SynthPreset {
    fn from(p: Preset) -> Self {
        match p {
            Preset::Disjoint => SynthPreset::Disjoint,
            Preset::Shared => SynthPreset::Shared,
            Preset::SingleTask => SynthPreset::SingleTask,
            Preset::Sparse => SynthPreset::Sparse,
            Preset::VerySparse => SynthPreset::VerySparse,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Check a graph directory and print one finding per line.
    Validate { graph: PathBuf },
    /// Generate a synthetic graph with planted relation signals.
    Synth {
        #[arg(long, conflicts_with = "preset", required_unless_present = "preset")]
        config: Option<PathBuf>,
        #[arg(long, value_enum)]
        preset: Option<Preset>,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Grid-search, train and test one model.
    Train {
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        /// Overrides the model and train seeds.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Progressive sharing masks and ablation variants over several seeds.
    Ablate {
        #[arg(long)]
        graph: PathBuf,
        /// Base model config; variant and mask are set per arm.
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        train: PathBuf,
        /// JSON `{"seeds": [...]}`, default seeds 0, 1, 2.
        #[arg(long)]
        plan: Option<PathBuf>,
        #[arg(long)]
        out_dir: PathBuf,
        /// Renumbers the plan's seeds consecutively from this value.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Score a trained checkpoint on one split part.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        graph: PathBuf,
        #[arg(long, value_enum, default_value = "test")]
        part: Part,
        /// Metrics JSON path; printed to stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Export attention weights of a trained checkpoint as CSV.
    Importance {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        graph: PathBuf,
        /// Explain one split part instead of every labeled target.
        #[arg(long, value_enum)]
        part: Option<Part>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Per-epoch wall time of every variant on one graph.
    BenchTime {
        #[arg(long, conflicts_with = "preset")]
        graph: Option<PathBuf>,
        /// Synthetic preset used when no graph is given (default disjoint).
        #[arg(long, value_enum)]
        preset: Option<Preset>,
        #[arg(long)]
        model: PathBuf,
        /// Epoch count comes from `max_epochs`; early stopping is off.
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Compare variants on a synthetic graph over several seeds.
    Experiment {
        /// JSON with `synth` (preset name or config), `variants`, `seeds`.
        #[arg(long)]
        plan: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn run(cli: Cli) -> Result<u8, exit::CliError> {
    match cli.command {
        Command::Validate { graph } => commands::validate(&graph),
        Command::Synth { config, preset, out_dir, seed } => {
            commands::synth(config.as_deref(), preset.map(Into::into), &out_dir, seed)
        }
        Command::Train { graph, model, train, out_dir, seed } => {
            commands::train(&TrainArgs { graph: &graph, model: &model, train: &train, out_dir: &out_dir, seed })
        }
        Command::Ablate { graph, model, train, plan, out_dir, seed } => commands::ablate(&AblateArgs {
            graph: &graph,
            model: &model,
            train: &train,
            plan: plan.as_deref(),
            out_dir: &out_dir,
            seed,
        }),
        Command::Evaluate { checkpoint, graph, part, out } => commands::evaluate(&checkpoint, &graph, part.into(), out.as_deref()),
        Command::Importance { checkpoint, graph, part, out } => {
            commands::importance(&checkpoint, &graph, part.map(Into::into), &out)
        }
        Command::BenchTime { graph, preset, model, train, out_dir, seed } => commands::bench(&BenchArgs {
            graph: graph.as_deref(),
            preset: preset.map(Into::into),
            model: &model,
            train: &train,
            out_dir: &out_dir,
            seed,
        }),
        Command::Experiment { plan, model, train, out_dir, seed } => commands::experiment(&plan, &model, &train, &out_dir, seed),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { exit::USAGE } else { exit::OK });
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code)
        }
    }
}
