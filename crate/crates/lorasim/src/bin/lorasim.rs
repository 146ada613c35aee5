//! Command-line front end: run one configuration (`simulate`) or the
//! config's `[sweep]` block (`sweep`).
//!
//! Exit codes: 0 success, 2 configuration error, 3 runtime invariant
//! violation.

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use lorasim::campaign::{simulate_to_dir, sweep_to_dir, RunnerError};
use lorasim::config::{parse_config, SimConfig};

#[derive(Parser)]
#[command(name = "lorasim", version, about = "Single-gateway LoRaWAN cell simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the configuration and write per-replication logs plus metrics.
    Simulate(RunArgs),
    /// Run the [sweep] block of the configuration; one metrics row per
    /// (point, replication).
    Sweep(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Path to the TOML configuration file.
    config: PathBuf,
    /// Output directory (created if missing).
    #[arg(long)]
    out: PathBuf,
    /// Override the master seed from the configuration.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the replication count from the configuration.
    #[arg(long)]
    replications: Option<u32>,
    /// Override any config field, e.g. --override policy.max_attempts=4.
    /// May be repeated.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

fn load_config(args: &RunArgs) -> Result<SimConfig, RunnerError> {
    let text = fs::read_to_string(&args.config).map_err(|e| {
        RunnerError::Config(lorasim::config::ConfigError::Invalid(format!(
            "cannot read {}: {e}",
            args.config.display()
        )))
    })?;
    let mut cfg = parse_config(&text, &args.overrides)?;
    if let Some(seed) = args.seed {
        cfg.master_seed = seed;
    }
    if let Some(reps) = args.replications {
        if reps == 0 {
            return Err(RunnerError::Config(lorasim::config::ConfigError::Invalid(
                "--replications must be positive".into(),
            )));
        }
        cfg.replications = reps;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), RunnerError> {
    match cli.command {
        Command::Simulate(args) => {
            let cfg = load_config(&args)?;
            simulate_to_dir(&cfg, &args.out)?;
            println!("wrote {}", args.out.display());
            Ok(())
        }
        Command::Sweep(args) => {
            let cfg = load_config(&args)?;
            sweep_to_dir(&cfg, &args.out)?;
            println!("wrote {}", args.out.display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    // Engine invariant violations surface as panics; report them as exit
    // code 3 instead of an abort.
    match std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| run(cli))) {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(err)) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
        Err(_) => {
            eprintln!("error: runtime invariant violation");
            ExitCode::from(3)
        }
    }
}
