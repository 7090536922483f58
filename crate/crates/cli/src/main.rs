//! `eend`: simulate, train, infer, score and inspect attention.
//!
//! Exit codes: 0 success, 1 usage or config error, 2 data error,
//! 3 numeric failure.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use eend_core::config::ExperimentConfig;
use eend_core::error::ErrorClass;
use eend_core::train::Phase;

#[derive(Debug, Parser)]
#[command(name = "eend", version, about = "EEND-EDA speaker diarization toolkit")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Global {
    /// Flat `key = value` config file; flags below override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Root seed for every random stream (overrides `seed` in the config).
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic two-speaker corpus (WAV + RTTM + manifest.tsv).
    Simulate(SimulateArgs),
    /// Two-phase training: baseline objective, then the attention auxiliary loss.
    Train(TrainArgs),
    /// Decode one recording to RTTM.
    Infer(InferArgs),
    /// DER / Miss / FA / Conf. of a hypothesis RTTM against a reference.
    Score(ScoreArgs),
    /// Per-head attention traces of one encoder layer, plus a matrix dump.
    InspectAttention(InspectArgs),
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long)]
    num_files: Option<usize>,
    #[arg(long)]
    target_overlap: Option<f64>,
    #[arg(long)]
    duration_s: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
enum PhaseArg {
    /// Baseline objective only (α = 0).
    Base,
    /// Auxiliary phase only; needs `--resume`.
    Vad,
    /// Baseline, then auxiliary.
    Both,
}

impl PhaseArg {
    fn phases(self) -> &'static [Phase] {
        match self {
            PhaseArg::Base => &[Phase::Base],
            PhaseArg::Vad => &[Phase::Vad],
            PhaseArg::Both => &[Phase::Base, Phase::Vad],
        }
    }
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// Corpus manifest (`#recording\taudio\trttm\tduration_s`).
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "both")]
    phase: PhaseArg,
    /// Train state written by an earlier run.
    #[arg(long)]
    resume: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct InferArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// WAV file or feature container.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Recording id in the RTTM; defaults to the input file stem.
    #[arg(long)]
    recording: Option<String>,
    #[arg(long)]
    threshold: Option<f64>,
    /// Odd window in frames.
    #[arg(long)]
    median_window: Option<usize>,
}

#[derive(Debug, Args)]
struct ScoreArgs {
    #[arg(long = "ref")]
    reference: PathBuf,
    #[arg(long)]
    hyp: PathBuf,
    /// Seconds forgiven either side of each reference boundary.
    #[arg(long)]
    collar: Option<f64>,
    #[arg(long)]
    ignore_overlap: bool,
}

#[derive(Debug, Args)]
struct InspectArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// WAV file or feature container; only the first chunk is used.
    #[arg(long)]
    input: PathBuf,
    /// 1-based encoder layer; defaults to the last one.
    #[arg(long)]
    layer: Option<usize>,
    /// Where to write the attention matrices.
    #[arg(long)]
    dump: Option<PathBuf>,
}

fn exit_code(class: ErrorClass) -> u8 {
    match class {
        ErrorClass::Config => 1,
        ErrorClass::Data => 2,
        ErrorClass::Numeric => 3,
    }
}

fn load_config(g: &Global) -> eend_core::Result<ExperimentConfig> {
    let mut cfg = match &g.config {
        Some(p) => ExperimentConfig::load(p).map_err(|e| match e {
            eend_core::Error::Io(io) => eend_core::Error::Config(format!("{}: {io}", p.display())),
            other => eend_core::Error::Config(other.to_string()),
        })?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = g.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> eend_core::Result<()> {
    let mut cfg = load_config(&cli.global)?;
    match cli.command {
        Command::Simulate(a) => commands::simulate(&mut cfg, a),
        Command::Train(a) => commands::train(&mut cfg, a),
        Command::Infer(a) => commands::infer(&mut cfg, a),
        Command::Score(a) => commands::score(&mut cfg, a),
        Command::InspectAttention(a) => commands::inspect_attention(&mut cfg, a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(e.class()))
        }
    }
}
