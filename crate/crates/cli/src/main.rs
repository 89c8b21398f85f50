//! `rsm`: ramped spin-readout simulation and estimation pipeline.
//!
//! Exit codes: 0 success, 1 validation failure (bad config, bad flags, wrong
//! stage order), 2 fit-diagnostic failure, 3 I/O failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use rsm_cli::commands::{
    cmd_classify, cmd_fit, cmd_report, cmd_selfcheck, cmd_simulate, FitFamily,
};
use rsm_cli::config::ExperimentConfig;
use rsm_cli::error::CliError;
use rsm_core::classify::ClassifyMethod;

#[derive(Parser)]
#[command(name = "rsm", version, about = "ramped spin-readout simulator and estimator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// Experiment configuration file (TOML with unit-suffixed quantities).
    #[arg(long, value_name = "PATH")]
    config: PathBuf,

    /// Replace the configured base seed.
    #[arg(long, value_name = "N")]
    seed: Option<u64>,

    /// Replace the configured run directory.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,

    /// Override a config key, e.g. `--override sweep.shots_per_point=200`
    /// or `--override device.t_e="0.9 K"`. Repeatable.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate trace batches and calibration scans into the run directory.
    Simulate {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Classify simulated trace batches into spin labels and exit times.
    Classify {
        #[command(flatten)]
        common: CommonArgs,
        /// Classification method (defaults to the configured one).
        #[arg(long, value_name = "METHOD")]
        method: Option<ClassifyMethod>,
    },
    /// Fit readout parameters from the artifacts of earlier stages.
    Fit {
        #[command(flatten)]
        common: CommonArgs,
        /// Estimation family to run.
        #[arg(long = "fit", value_name = "FAMILY")]
        family: FitFamily,
        /// Classification method whose tables feed the mixture fit.
        #[arg(long, value_name = "METHOD")]
        method: Option<ClassifyMethod>,
    },
    /// Summarize a run directory into report.txt.
    Report {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Run internal consistency checks; needs no run directory.
    Selfcheck,
}

fn load_config(common: &CommonArgs) -> Result<ExperimentConfig, CliError> {
    let text = std::fs::read_to_string(&common.config)
        .map_err(|e| CliError::file(&common.config.display().to_string(), e))?;
    ExperimentConfig::from_text(&text, &common.overrides, common.seed, common.out.as_ref())
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Simulate { common } => cmd_simulate(&load_config(&common)?),
        Command::Classify { common, method } => cmd_classify(&load_config(&common)?, method),
        Command::Fit {
            common,
            family,
            method,
        } => cmd_fit(&load_config(&common)?, family, method),
        Command::Report { common } => cmd_report(&load_config(&common)?),
        Command::Selfcheck => cmd_selfcheck(),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code: u8 = match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            // clap renders help to stdout and errors to stderr
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
