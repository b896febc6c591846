use clap::{Args, Parser, Subcommand};
use cohsim_cli::{run_gmi, run_model, run_report, run_simulate, ReportOptions, RunOptions};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "cohsim",
    version,
    about = "Coherent optical transmission simulator and link-budget toolkit"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct CommonRunArgs {
    /// Experiment configuration (TOML).
    config: PathBuf,
    /// Master seed override.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker thread count (also COHSIM_WORKERS).
    #[arg(long)]
    workers: Option<usize>,
    /// Output directory (also COHSIM_OUT).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write a quick results.svg plot.
    #[arg(long)]
    svg: bool,
}

impl From<&CommonRunArgs> for RunOptions {
    fn from(a: &CommonRunArgs) -> Self {
        RunOptions { seed: a.seed, workers: a.workers, out_dir: a.out.clone(), svg: a.svg }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run a waveform-level simulation scenario (anli_vs_distance,
    /// snr_vs_distance or backtoback).
    Simulate(CommonRunArgs),
    /// Evaluate the closed-form SNR-versus-distance model.
    Model(CommonRunArgs),
    /// Estimate GMI and gap-to-capacity over an SNR sweep.
    Gmi(CommonRunArgs),
    /// Merge result CSVs into a comparison table and plots.
    Report {
        /// Result CSVs to merge (first file is the reference for deltas).
        #[arg(required = true)]
        csvs: Vec<PathBuf>,
        /// Directory for comparison.svg.
        #[arg(long)]
        svg: Option<PathBuf>,
        /// Output directory (also COHSIM_OUT).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Simulate(args) => run_simulate(&args.config, &RunOptions::from(args))
            .map(|out| println!("wrote {} rows to {}", out.rows, out.results_csv.display())),
        Command::Model(args) => run_model(&args.config, &RunOptions::from(args))
            .map(|out| println!("wrote {} rows to {}", out.rows, out.results_csv.display())),
        Command::Gmi(args) => run_gmi(&args.config, &RunOptions::from(args))
            .map(|out| println!("wrote {} rows to {}", out.rows, out.results_csv.display())),
        Command::Report { csvs, svg, out } => {
            let out_dir = out
                .clone()
                .or_else(|| std::env::var(cohsim_cli::scenario::ENV_OUT).ok().map(PathBuf::from))
                .unwrap_or_else(|| PathBuf::from("out"));
            run_report(csvs, &ReportOptions { out_dir, svg_dir: svg.clone() })
                .map(|path| println!("wrote {}", path.display()))
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
