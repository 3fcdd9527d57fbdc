//! Thin command-line front end over the scenario pipelines.

use clap::{Parser, Subcommand};
use fracheat::error::Error;
use fracheat::scenario::{self, MethodSpec, Overrides, Scenario};
use rayon::prelude::*;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "fracheat", version, about = "Forward and inverse solvers for the time-fractional heat equation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write its artifacts.
    Run {
        /// Scenario file(s); several run as a batch, each into its own
        /// subdirectory of --out.
        #[arg(long, required = true)]
        scenario: Vec<PathBuf>,
        /// Output directory (default: runs/<scenario name>).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Override the mode count.
        #[arg(long)]
        modes: Option<usize>,
        /// Override the grid resolution N.
        #[arg(long)]
        grid: Option<usize>,
        /// Override the forward method.
        #[arg(long, value_parser = parse_method)]
        method: Option<MethodSpec>,
        /// Seed for randomized verification checks.
        #[arg(long)]
        seed: Option<u64>,
        /// Run multiple scenarios concurrently.
        #[arg(long)]
        batch: bool,
    },
    /// Print the resolved configuration of a scenario.
    Describe {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        modes: Option<usize>,
        #[arg(long)]
        grid: Option<usize>,
    },
    /// Run the invariant suites on a scenario's configuration.
    Verify {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        modes: Option<usize>,
        #[arg(long)]
        grid: Option<usize>,
    },
}

fn parse_method(s: &str) -> Result<MethodSpec, String> {
    match s {
        "picard" => Ok(MethodSpec::Picard),
        "l1" => Ok(MethodSpec::L1),
        other => Err(format!("unknown method '{other}' (picard | l1)")),
    }
}

/// 0 success, 1 validation, 2 solver failure, 3 verification failure.
fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::Scenario(msg) if msg.contains("verification checks failed") => 3,
        Error::Scenario(_) | Error::Domain(_) | Error::ShapeMismatch(_) | Error::Io(_) => 1,
        _ => 2,
    }
}

fn run_one(
    path: &PathBuf,
    out: Option<&PathBuf>,
    overrides: Overrides,
    batch_root: Option<&PathBuf>,
) -> Result<(), Error> {
    let scenario = Scenario::load(path)?;
    let name = scenario.name.clone();
    let base = path.parent().unwrap_or_else(|| std::path::Path::new("."));
    let resolved = scenario::resolve(scenario, base, overrides)?;
    let out_dir = match (out, batch_root) {
        (Some(dir), None) => dir.clone(),
        (Some(root), Some(_)) | (None, Some(root)) => root.join(&name),
        (None, None) => PathBuf::from("runs").join(&name),
    };
    let artifacts = scenario::run(&resolved, &out_dir)?;
    eprintln!(
        "{name}: wrote {} file(s) to {}",
        artifacts.files.len(),
        artifacts.out_dir.display()
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result: Result<(), Error> = match cli.command {
        Command::Run {
            scenario,
            out,
            modes,
            grid,
            method,
            seed,
            batch,
        } => {
            let overrides = Overrides {
                n_modes: modes,
                grid_steps: grid,
                method,
                seed,
            };
            if scenario.len() > 1 {
                let root = out.clone().unwrap_or_else(|| PathBuf::from("runs"));
                let runs: Vec<Result<(), Error>> = if batch {
                    scenario
                        .par_iter()
                        .map(|p| run_one(p, None, overrides, Some(&root)))
                        .collect()
                } else {
                    scenario
                        .iter()
                        .map(|p| run_one(p, None, overrides, Some(&root)))
                        .collect()
                };
                runs.into_iter().collect()
            } else {
                run_one(&scenario[0], out.as_ref(), overrides, None)
            }
        }
        Command::Describe { scenario, modes, grid } => (|| {
            let s = Scenario::load(&scenario)?;
            let base = scenario.parent().unwrap_or_else(|| std::path::Path::new("."));
            let resolved = scenario::resolve(
                s,
                base,
                Overrides {
                    n_modes: modes,
                    grid_steps: grid,
                    ..Default::default()
                },
            )?;
            print!("{}", scenario::describe(&resolved)?);
            Ok(())
        })(),
        Command::Verify {
            scenario,
            out,
            seed,
            modes,
            grid,
        } => (|| {
            let s = Scenario::load(&scenario)?;
            let base = scenario.parent().unwrap_or_else(|| std::path::Path::new("."));
            let mut resolved = scenario::resolve(
                s,
                base,
                Overrides {
                    n_modes: modes,
                    grid_steps: grid,
                    seed,
                    ..Default::default()
                },
            )?;
            resolved.mode = scenario::RunMode::Verify;
            let out_dir = out.unwrap_or_else(|| PathBuf::from("runs").join("verify"));
            scenario::run(&resolved, &out_dir)?;
            Ok(())
        })(),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}
