use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use npcgp_cli::artifact::summary_csv;
use npcgp_cli::commands::{cmd_covariance, cmd_eval, cmd_toygen, cmd_train, covariance_csv};
use npcgp_cli::config::RunConfig;
use npcgp_cli::selfcheck::run_selfcheck;
use npcgp_cli::{CliError, Result};

#[derive(Parser)]
#[command(name = "npcgp", version, about = "Nonparametric convolved Gaussian process models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model described by a configuration file.
    Train {
        #[arg(long)]
        config: PathBuf,
    },
    /// Score a saved model on a CSV dataset (original target scale).
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 100)]
        samples: usize,
    },
    /// Output covariance curves along each input dimension, as CSV.
    Covariance {
        #[arg(long)]
        model: PathBuf,
        /// Lags span [-range, range] in original input units.
        #[arg(long)]
        range: f64,
        #[arg(long)]
        grid: usize,
        #[arg(long, default_value_t = 50)]
        samples: usize,
        /// Write here instead of standard output.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write the two-output synthetic dataset.
    Toygen {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Check closed forms, samplers, gradients and KL terms against references.
    Selfcheck,
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train { config } => {
            let cfg = RunConfig::load(&config)?;
            let outcome = cmd_train(&cfg)?;
            print!("{}", summary_csv(&outcome.summary));
            eprintln!("model written to {}", outcome.model_path.display());
        }
        Command::Eval { model, data, samples } => {
            print!("{}", summary_csv(&cmd_eval(&model, &data, samples)?));
        }
        Command::Covariance {
            model,
            range,
            grid,
            samples,
            out,
        } => {
            let csv = covariance_csv(&cmd_covariance(&model, range, grid, samples)?);
            match out {
                Some(p) => npcgp_cli::artifact::write_atomic(&p, csv.as_bytes())?,
                None => print!("{csv}"),
            }
        }
        Command::Toygen { n, seed, out } => {
            cmd_toygen(n, seed, &out)?;
        }
        Command::Selfcheck => {
            let report = run_selfcheck();
            print!("{report}");
            if !report.passed() {
                return Err(CliError::Check(report.failures().join(", ")));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("npcgp: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
