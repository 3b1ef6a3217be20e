mod commands;
mod config;
mod output;
mod plot;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::{
    CalibrateArgs, DiagnoseArgs, EvaluateArgs, MineArgs, PredictArgs, Run, SimulateArgs, SweepArgs,
};
use config::{GlobalFlags, UsageError};

#[derive(Debug, Parser)]
#[command(name = "ladcalib", version, about = "Position-bias calibration for multi-candidate choice inference")]
struct Cli {
    /// Top-level seed; every random stream derives from it.
    #[arg(long, global = true, value_parser = clap::value_parser!(u64).range(..=i64::MAX as u64))]
    seed: Option<u64>,
    /// Worker threads (0 = all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// TOML file with global keys and one table per command.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate calibration and evaluation traces from a synthetic biased model.
    Simulate(SimulateArgs),
    /// Build a calibration profile from a symmetrized calibration set.
    Calibrate(CalibrateArgs),
    /// Score shuffled episodes with one or more predictors.
    Evaluate(EvaluateArgs),
    /// Like `evaluate`, with every predictor by default.
    Compare(EvaluateArgs),
    /// Write the full debiasing record for each trace.
    Predict(PredictArgs),
    /// Ablation over one parameter on synthetic data.
    Sweep(SweepArgs),
    /// Build an episode manifest from precomputed embeddings.
    Mine(MineArgs),
    /// Logit profiles and logit-attention divergence tables.
    Diagnose(DiagnoseArgs),
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let flags = GlobalFlags {
        seed: cli.seed,
        jobs: cli.jobs,
        out_dir: cli.out_dir,
    };
    let run = Run::new(cli.config.as_deref(), &flags)?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(run.global.jobs)
        .build_global()?;
    match &cli.command {
        Command::Simulate(a) => commands::simulate(&run, a),
        Command::Calibrate(a) => commands::calibrate(&run, a),
        Command::Evaluate(a) => commands::evaluate(&run, "evaluate", a, &["ours"]),
        Command::Compare(a) => commands::evaluate(&run, "compare", a, &["all"]),
        Command::Predict(a) => commands::predict(&run, a),
        Command::Sweep(a) => commands::sweep(&run, a),
        Command::Mine(a) => commands::mine(&run, a),
        Command::Diagnose(a) => commands::diagnose(&run, a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("LADCALIB_LOG", "warn"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(1)
            } else {
                ExitCode::from(2)
            }
        }
    }
}
