//! `rre`: train, evaluate and run the reinforced recurrent encoder.

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::error::CliResult;

#[derive(Parser)]
#[command(name = "rre", version, about = "Reinforced recurrent encoder forecaster")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the configured mode for each seed.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Run only this seed instead of the configured list.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Forecast every window of a CSV with a saved model.
    Infer {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Compare RRE with the Naive-all and Naive-last baselines.
    Bench {
        #[arg(long)]
        config: PathBuf,
    },
    /// Write a synthetic series with corrupted driver readings.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        steps: usize,
        #[arg(long)]
        noise_frac: f64,
        #[arg(long)]
        seed: u64,
    },
}

fn init_logging() {
    let level = std::env::var("RRE_LOG").unwrap_or_else(|_| "info".into());
    let level = match level.as_str() {
        "error" | "info" | "debug" => level,
        other => {
            eprintln!("RRE_LOG must be error, info or debug (got `{other}`); using info");
            "info".into()
        }
    };
    env_logger::Builder::new().parse_filters(&level).format_timestamp(None).init();
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Train { config, seed } => {
            let cfg = config::load(&config)?;
            let out = commands::train(&cfg, seed)?;
            for p in out.checkpoints.iter().chain(&out.logs) {
                println!("wrote {}", p.display());
            }
            println!("wrote {}", out.metrics.display());
        }
        Command::Infer { checkpoint, input, output } => {
            let (n, actions) = commands::infer(&checkpoint, &input, &output)?;
            println!("wrote {n} forecasts to {} and actions to {}", output.display(), actions.display());
        }
        Command::Bench { config } => {
            let cfg = config::load(&config)?;
            let (path, rows) = commands::bench(&cfg)?;
            commands::write_bench_csv(&rows, std::io::stdout())?;
            println!("wrote {}", path.display());
        }
        Command::Synth { out, steps, noise_frac, seed } => {
            commands::synth(&out, steps, noise_frac, seed)?;
            println!("wrote {}", out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let usage = e.use_stderr();
            let _ = e.print();
            return ExitCode::from(if usage { 2 } else { 0 });
        }
    };
    init_logging();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
