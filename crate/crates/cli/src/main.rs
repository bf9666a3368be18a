//! Command-line simulator for funnel model predictive control.
//!
//! Subcommands: `fmpc` (receding-horizon controller), `funnel-controller`
//! (closed-form baseline), `compare` (both, with an input-energy
//! comparison) and `verify` (re-check a written trace). Exit codes: 0 on
//! success, 2 when a run or trace violates its feasibility claims, 3 on
//! configuration or usage errors.

mod config;
mod run;
mod trace;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::config::{Scenario, ScenarioConfig};
use crate::run::Failure;

#[derive(Parser)]
#[command(
    name = "funnel-mpc",
    version,
    about = "Funnel model predictive control simulator",
    propagate_version = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the receding-horizon funnel controller.
    Fmpc(RunArgs),
    /// Run the closed-form funnel-controller baseline.
    FunnelController(RunArgs),
    /// Run both controllers and compare their input energies.
    Compare(RunArgs),
    /// Re-check the trace in the output directory against the scenario.
    Verify(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Scenario file (JSON; unknown keys are rejected).
    #[arg(long, value_name = "path", conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Built-in scenario (`mass-on-car`).
    #[arg(long, value_name = "name")]
    preset: Option<String>,
    /// Directory for trace.csv / summary.json artifacts.
    #[arg(long, value_name = "dir", default_value = ".")]
    out: PathBuf,
    /// Overrides the scenario's end time.
    #[arg(long, value_name = "real")]
    t_end: Option<f64>,
}

fn load_scenario(args: &RunArgs) -> Result<Scenario, Failure> {
    let mut config = match (&args.config, &args.preset) {
        (Some(path), None) => {
            let text = std::fs::read_to_string(path).map_err(|e| {
                Failure::Config(format!("cannot read {}: {e}", path.display()))
            })?;
            ScenarioConfig::from_json(&text).map_err(Failure::Config)?
        }
        (None, Some(name)) if name == "mass-on-car" => ScenarioConfig::default(),
        (None, Some(name)) => {
            return Err(Failure::Config(format!(
                "unknown preset `{name}` (available: mass-on-car)"
            )))
        }
        (None, None) => {
            return Err(Failure::Config(
                "either --config <path> or --preset <name> is required".into(),
            ))
        }
        (Some(_), Some(_)) => unreachable!("clap rejects --config with --preset"),
    };
    if let Some(t_end) = args.t_end {
        config.t_end = t_end;
    }
    config.build().map_err(Failure::Config)
}

fn dispatch(cli: &Cli) -> Result<String, Failure> {
    let (args, runner, done): (
        &RunArgs,
        fn(&Scenario, &Path) -> Result<(), Failure>,
        &str,
    ) = match &cli.command {
        Command::Fmpc(a) => (a, run::run_fmpc, "run complete"),
        Command::FunnelController(a) => (a, run::run_funnel_controller, "run complete"),
        Command::Compare(a) => (a, run::run_compare, "comparison complete"),
        Command::Verify(a) => (a, run::run_verify, "trace verified"),
    };
    let scenario = load_scenario(args)?;
    runner(&scenario, &args.out)?;
    Ok(match &cli.command {
        Command::Verify(_) => format!("{done}: {}", args.out.join("trace.csv").display()),
        _ => format!("{done}: {}", args.out.join("summary.json").display()),
    })
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            // `--help` / `--version` arrive as non-error variants and must
            // exit 0; genuine usage errors exit 3 (2 is reserved for
            // feasibility violations).
            let failed = err.use_stderr();
            let _ = err.print();
            return if failed { ExitCode::from(3) } else { ExitCode::SUCCESS };
        }
    };
    match dispatch(&cli) {
        Ok(message) => {
            println!("{message}");
            ExitCode::SUCCESS
        }
        Err(failure) => {
            eprintln!("error: {}", failure.message());
            ExitCode::from(failure.exit_code() as u8)
        }
    }
}
