use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use clc_lqr::harness::{self, ExperimentConfig, Method};

/// Scalar finite-horizon LQR with unknown dynamics: combined
/// learning-and-control, an exact Riccati reference, and model-free
/// baselines, driven by flat `key = value` config files.
#[derive(Parser)]
#[command(name = "clc-lqr", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// Experiment config file (flat `key = value` text).
    #[arg(long)]
    config: PathBuf,
    /// Override the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the config's output path.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Exact solution with known true dynamics (the ground-truth reference).
    Riccati(RunArgs),
    /// One combined learning-and-control run for a fixed beta.
    Clc(RunArgs),
    /// Learn the penalty weights by finite-difference descent.
    LearnBeta(RunArgs),
    /// Policy-gradient baseline.
    Pg(RunArgs),
    /// Random-search baseline.
    Rs(RunArgs),
    /// Tabular Q-learning baseline.
    Q(RunArgs),
    /// Cost-versus-beta1 sweep across true dynamics.
    SweepBeta(RunArgs),
    /// Sample-efficiency comparison of all methods.
    Compare(RunArgs),
}

impl Command {
    fn method(&self) -> Method {
        match self {
            Command::Riccati(_) => Method::Riccati,
            Command::Clc(_) => Method::Clc,
            Command::LearnBeta(_) => Method::LearnBeta,
            Command::Pg(_) => Method::Pg,
            Command::Rs(_) => Method::Rs,
            Command::Q(_) => Method::Q,
            Command::SweepBeta(_) => Method::SweepBeta,
            Command::Compare(_) => Method::Compare,
        }
    }

    fn args(&self) -> &RunArgs {
        match self {
            Command::Riccati(a)
            | Command::Clc(a)
            | Command::LearnBeta(a)
            | Command::Pg(a)
            | Command::Rs(a)
            | Command::Q(a)
            | Command::SweepBeta(a)
            | Command::Compare(a) => a,
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::FAILURE
        }
    }
}

fn execute(command: &Command) -> clc_lqr::Result<()> {
    let args = command.args();
    let text = std::fs::read_to_string(&args.config)?;
    let config =
        ExperimentConfig::parse_with_overrides(&text, args.seed, args.out.clone())?;
    if config.method != command.method() {
        return Err(clc_lqr::Error::config(format!(
            "config declares method `{}` but the `{}` subcommand was invoked",
            config.method.tag(),
            command.method().tag()
        )));
    }
    let report = harness::run(&config)?;
    println!("wrote {}", report.output.display());
    println!("wrote {}", report.manifest.display());
    println!("total real-system episodes: {}", report.total_episodes);
    for (key, value) in &report.summary {
        if key.starts_with("result.") {
            println!("{key} = {value}");
        }
    }
    Ok(())
}
