use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use ussir_cli::{
    cmd_criteria, cmd_ensemble, cmd_simulate, cmd_validate, load_scenario, Overrides, Status,
};

#[derive(Debug, Parser)]
#[command(
    name = "ussir",
    version,
    about = "Stochastic SIR simulation and threshold criteria"
)]
struct Cli {
    #[arg(value_enum)]
    command: Command,
    /// Scenario file.
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long)]
    horizon: Option<f64>,
    #[arg(long)]
    paths: Option<usize>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Command {
    /// One path plus its noise-free and drift-free companions.
    Simulate,
    /// Seeded path ensemble compared against the criteria.
    Ensemble,
    /// Extinction and persistence thresholds.
    Criteria,
    /// Conservation and positivity checks.
    Validate,
}

fn run(cli: Cli) -> anyhow::Result<Status> {
    let mut cfg = load_scenario(&cli.config)?;
    Overrides {
        seed: cli.seed,
        out: cli.out,
        dt: cli.dt,
        horizon: cli.horizon,
        paths: cli.paths,
    }
    .apply(&mut cfg)?;
    let outcome = match cli.command {
        Command::Simulate => cmd_simulate(&cfg)?,
        Command::Ensemble => cmd_ensemble(&cfg)?,
        Command::Criteria => cmd_criteria(&cfg)?,
        Command::Validate => cmd_validate(&cfg)?,
    };
    print!("{}", outcome.summary);
    for f in &outcome.files {
        eprintln!("wrote {}", f.display());
    }
    Ok(outcome.status)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            // exit code 2 is reserved for inconsistent verdicts
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(Status::Ok) => ExitCode::SUCCESS,
        Ok(Status::Inconsistent) => ExitCode::from(2),
        Ok(Status::Failed) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
