use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use rwre::experiment::{run_experiment, Experiment, ExperimentConfig};
use rwre::Error;

/// Runs one verification campaign and writes its tables and report.
#[derive(Debug, Parser)]
#[command(name = "rwre", version)]
struct Cli {
    experiment: Experiment,
    /// JSON configuration; missing fields take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    threads: Option<usize>,
    /// Output directory for CSV tables and report.json.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    let mut cfg = match &cli.config {
        Some(p) => match ExperimentConfig::from_file(p) {
            Ok(c) => c,
            Err(e) => {
                eprintln!("rwre: {e}");
                return ExitCode::from(2);
            }
        },
        None => ExperimentConfig::default(),
    };
    cfg.experiment = Some(cli.experiment);
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(t) = cli.threads {
        cfg.threads = Some(t);
    }
    if let Some(o) = cli.out {
        cfg.out_dir = Some(o);
    }
    match run_experiment(&cfg) {
        Ok(rep) => {
            print!("{}", rep.summary());
            if rep.passed() { ExitCode::SUCCESS } else { ExitCode::from(1) }
        }
        Err(e) => {
            eprintln!("rwre: {e}");
            match e {
                Error::Config(_) | Error::InvalidArgument(_) | Error::InvalidLaw(_) | Error::InfeasibleSchedule { .. } => {
                    ExitCode::from(2)
                }
                _ => ExitCode::from(1),
            }
        }
    }
}
