use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use grok_lab::{run_experiment, run_report, run_stats, CliError, ExperimentKind, RunOptions};

#[derive(Parser)]
#[command(
    name = "grok-lab",
    version,
    about = "Run grokking experiments and render their figures"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// JSON experiment config.
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config's master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; overrides the config's `out`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads. Outputs do not depend on it.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

#[derive(Args)]
struct InputArgs {
    /// `sweep.csv` for stats, a finished output directory for report.
    #[arg(long = "in")]
    input: PathBuf,
    /// Defaults to the input's directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Sample datasets and write them as CSV.
    Gen(ConfigArgs),
    /// Train one model per seed and record traces and grokking gaps.
    Train(ConfigArgs),
    /// Concealment sweep over modular datasets and extra dimensions.
    Sweep(ConfigArgs),
    /// Objective surfaces with hyperparameter trajectories.
    Landscape(ConfigArgs),
    /// BNN sweep over initial weight scales.
    BnnSweep(ConfigArgs),
    /// Log-space fit and correlation over a sweep.
    Stats(InputArgs),
    /// SVG figures for a finished output directory.
    Report(InputArgs),
}

fn config_run(kind: ExperimentKind, a: ConfigArgs) -> Result<(), CliError> {
    let opts = RunOptions {
        config: a.config,
        seed: a.seed,
        out: a.out,
        jobs: a.jobs,
    };
    let out = run_experiment(kind, &opts)?;
    println!("wrote {}", out.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Gen(a) => config_run(ExperimentKind::Gen, a),
        Command::Train(a) => config_run(ExperimentKind::Train, a),
        Command::Sweep(a) => config_run(ExperimentKind::Sweep, a),
        Command::Landscape(a) => config_run(ExperimentKind::Landscape, a),
        Command::BnnSweep(a) => config_run(ExperimentKind::BnnSweep, a),
        Command::Stats(a) => {
            let out = a
                .out
                .unwrap_or_else(|| a.input.parent().map(PathBuf::from).unwrap_or_default());
            run_stats(&a.input, &out).map(|s| {
                println!(
                    "combined r = {:?}, p = {:?} over {} cells",
                    s.combined.r, s.combined.p, s.combined.n
                );
            })
        }
        Command::Report(a) => {
            let out = a.out.unwrap_or_else(|| a.input.clone());
            run_report(&a.input, &out).map(|files| {
                for f in files {
                    println!("wrote {}", out.join(f).display());
                }
            })
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("grok-lab: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
