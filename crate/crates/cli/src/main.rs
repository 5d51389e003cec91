//! `dqlq` command-line entry point.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dqlq_cli::commands::{self, RunMode};
use dqlq_cli::config::{self, ExperimentConfig, Overrides, Seeds};
use dqlq_cli::CliError;

#[derive(Parser)]
#[command(name = "dqlq", version, about = "Distributed Q-learning for stochastic LQ control")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve for G*, P and K* and write oracle.json.
    Oracle(Common),
    /// Run the learners and write per-seed traces, plots and summary.json.
    Run {
        #[command(flatten)]
        common: Common,
        /// centralized | distributed | both
        #[arg(long, default_value = "distributed")]
        mode: RunMode,
    },
    /// Check the learned controller against K* and write controller_report.json.
    ValidateController {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "distributed")]
        mode: RunMode,
        /// Evaluate K* itself instead of a learned gain.
        #[arg(long)]
        use_oracle_gain: bool,
    },
}

#[derive(Args)]
struct Common {
    /// TOML experiment file.
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Shipped configuration, e.g. paper_sec4.
    #[arg(long)]
    preset: Option<String>,
    /// Seed count (`5`) or list (`1,4,9`).
    #[arg(long, value_parser = Seeds::parse_flag)]
    seeds: Option<Seeds>,
    /// Override the number of rounds.
    #[arg(long)]
    rounds: Option<usize>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Common {
    fn load(&self) -> Result<ExperimentConfig, CliError> {
        let overrides = Overrides {
            rounds: self.rounds,
            seeds: self.seeds.clone(),
            output_dir: self.out.clone(),
        };
        let cfg = match (&self.config, &self.preset) {
            (Some(path), _) => config::load_config(path, &overrides)?,
            (None, Some(name)) => config::load_preset(name, &overrides)?,
            (None, None) => config::load_preset("paper_sec4", &overrides)?,
        };
        Ok(cfg)
    }
}

fn execute(cli: Cli) -> Result<i32, CliError> {
    match cli.command {
        Command::Oracle(common) => {
            let cfg = common.load()?;
            let report = commands::cmd_oracle(&cfg, &cfg.output_dir)?;
            println!(
                "oracle: {} iterations, residual {:e}, spectral radius {:.6} -> {}",
                report.iterations,
                report.residual,
                report.spectral_radius,
                cfg.output_dir.join("oracle.json").display()
            );
            Ok(commands::exit::CLEAN)
        }
        Command::Run { common, mode } => {
            let cfg = common.load()?;
            let outcome = commands::cmd_run(&cfg, mode, &cfg.output_dir)?;
            let s = &outcome.summary;
            println!(
                "{} {} seed(s), {} rounds: {} of {} runs diverged -> {}",
                s.name,
                s.seeds.len(),
                s.rounds,
                s.diverged_runs,
                s.total_runs,
                cfg.output_dir.join("summary.json").display()
            );
            Ok(outcome.status.exit_code())
        }
        Command::ValidateController {
            common,
            mode,
            use_oracle_gain,
        } => {
            let cfg = common.load()?;
            let report = commands::cmd_validate_controller(&cfg, mode, use_oracle_gain, &cfg.output_dir)?;
            for c in &report.controllers {
                let cost = c
                    .cost
                    .as_ref()
                    .map(|k| format!("cost {:.6} ± {:.6}", k.mean, k.std_err))
                    .unwrap_or_else(|| "cost n/a".into());
                println!(
                    "{} seed {:?}: gain gap {:.3e}, spectral radius {:.6}, {cost} (oracle value {:.6})",
                    c.source, c.seed, c.gain_gap, c.spectral_radius, report.oracle_value
                );
            }
            Ok(commands::exit::CLEAN)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("QLEARN_LOG", "warn")).init();
    let code = match execute(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    };
    ExitCode::from(code as u8)
}
