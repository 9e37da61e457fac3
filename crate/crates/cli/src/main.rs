//! `duopt` — joint preference/supervised optimization runner.
//!
//! Subcommands: `run` (one config-driven run), `sweep` (λ grid × seeds),
//! `reproduce` (bundled experiments with thresholds), `verify` (numerical
//! oracle suite). Exit statuses: 0 success, 1 validation error, 2 runtime
//! failure, 3 threshold failure.

mod commands;
mod config;
mod error;
mod output;
mod presets;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::commands::Overrides;
use crate::error::{CliResult, EXIT_VALIDATION};

#[derive(Parser)]
#[command(
    name = "duopt",
    version,
    about = "Joint DPO/SFT optimization over softmax linear-feature policies: \
             runs, sweeps, reproduction presets, and numerical verification"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute one optimization run from an experiment config.
    Run(ConfigArgs),
    /// Run the config's variant across its λ grid, once per seed.
    ///
    /// Fan-out uses a worker pool sized by DUOPT_WORKERS (default:
    /// available parallelism); the i-th grid entry runs with seed
    /// base+i and aggregation order is deterministic.
    Sweep(ConfigArgs),
    /// Rebuild a bundled experiment end to end and check its thresholds.
    Reproduce {
        /// Which experiment to rebuild.
        #[arg(value_enum)]
        preset: Preset,
        /// Directory for artifact files.
        #[arg(long, default_value = "out")]
        output_dir: PathBuf,
        /// Base seed for the preset's runs.
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Run the numerical-oracle suite (gradients, convexity, identities).
    Verify {
        /// Base seed for randomized probes.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Optional directory for the JSON check report.
        #[arg(long)]
        output_dir: Option<PathBuf>,
    },
}

#[derive(Args)]
struct ConfigArgs {
    /// Experiment config file (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Override the config's seed(s).
    #[arg(long)]
    seed: Option<u64>,
    /// Override the config's output directory.
    #[arg(long)]
    output_dir: Option<PathBuf>,
    /// Override the trajectory log stride.
    #[arg(long)]
    log_stride: Option<u64>,
}

impl ConfigArgs {
    fn overrides(&self) -> Overrides {
        Overrides {
            seed: self.seed,
            output_dir: self.output_dir.clone(),
            log_stride: self.log_stride,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Preset {
    /// Scalar-instance gap comparison (sequential vs alternating).
    LowerboundGap,
    /// Two-dimensional loss-space ordering figure.
    Toy2dFigure,
    /// Run-mean gap convergence-rate fit.
    RateCheck,
}

fn dispatch(cli: Cli) -> CliResult<u8> {
    match cli.command {
        Command::Run(args) => commands::cmd_run(&args.config, &args.overrides()),
        Command::Sweep(args) => commands::cmd_sweep(&args.config, &args.overrides()),
        Command::Reproduce {
            preset,
            output_dir,
            seed,
        } => match preset {
            Preset::LowerboundGap => presets::lowerbound_gap(&output_dir, seed),
            Preset::Toy2dFigure => presets::toy2d_figure(&output_dir, seed),
            Preset::RateCheck => presets::rate_check(&output_dir, seed),
        },
        Command::Verify { seed, output_dir } => {
            commands::cmd_verify(seed, output_dir.as_deref())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => EXIT_VALIDATION,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli) {
        Ok(code) => ExitCode::from(code),
        Err(failure) => {
            eprintln!("error: {:#}", failure.error);
            ExitCode::from(failure.code)
        }
    }
}
