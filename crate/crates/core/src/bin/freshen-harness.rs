use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use freshen::harness::{read_rows, run_scenario, summarize_rows, RunOptions};
use freshen::scenario::{Scenario, ScenarioError};
use freshen::FreshenMode;

const EXIT_INVALID: u8 = 1;
const EXIT_RUNTIME: u8 = 2;

#[derive(Parser)]
#[command(name = "freshen-harness", version, about = "Run freshen scenarios on the simulated runtime")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write the CSV report.
    Run {
        #[arg(long)]
        scenario: PathBuf,
        /// Comma-separated modes; defaults to the scenario's list.
        #[arg(long, value_delimiter = ',')]
        modes: Option<Vec<FreshenMode>>,
        #[arg(long, env = "FRESHEN_SEED")]
        seed: Option<u64>,
        #[arg(long)]
        iterations: Option<usize>,
        #[arg(long, default_value = "report.csv")]
        out: PathBuf,
    },
    /// Check a scenario file and list every problem in it.
    Validate {
        #[arg(long)]
        scenario: PathBuf,
    },
    /// Summarize a CSV report, or run a scenario and summarize it.
    Report {
        #[arg(long, conflicts_with = "scenario", required_unless_present = "scenario")]
        input: Option<PathBuf>,
        #[arg(long)]
        scenario: Option<PathBuf>,
        #[arg(long, env = "FRESHEN_SEED")]
        seed: Option<u64>,
        /// Write the summary here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load(path: &PathBuf) -> Result<Scenario, ExitCode> {
    Scenario::load(path).map_err(|e| {
        match &e {
            ScenarioError::Invalid(diags) => {
                for d in diags {
                    eprintln!("{d}");
                }
            }
            other => eprintln!("{other}"),
        }
        ExitCode::from(EXIT_INVALID)
    })
}

fn emit(text: &str, out: Option<&PathBuf>) -> ExitCode {
    match out {
        Some(path) => match std::fs::write(path, text) {
            Ok(()) => ExitCode::SUCCESS,
            Err(e) => {
                eprintln!("{}: {e}", path.display());
                ExitCode::from(EXIT_RUNTIME)
            }
        },
        None => {
            print!("{text}");
            ExitCode::SUCCESS
        }
    }
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::from_default_env())
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    match cli.command {
        Command::Run {
            scenario,
            modes,
            seed,
            iterations,
            out,
        } => {
            let sc = match load(&scenario) {
                Ok(s) => s,
                Err(code) => return code,
            };
            let opts = RunOptions { modes, seed, iterations };
            tracing::info!(scenario = %sc.name, seed = opts.seed.unwrap_or(sc.seed), "running");
            match run_scenario(&sc, &opts).and_then(|r| r.write_csv(&out).map(|()| r)) {
                Ok(report) => {
                    eprint!("{}", report.summary());
                    eprintln!("wrote {}", out.display());
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::from(EXIT_RUNTIME)
                }
            }
        }
        Command::Validate { scenario } => match load(&scenario) {
            Ok(sc) => {
                println!(
                    "{}: ok ({} functions, {} chains, {} endpoints)",
                    scenario.display(),
                    sc.functions.len(),
                    sc.chains.len(),
                    sc.endpoints.len()
                );
                ExitCode::SUCCESS
            }
            Err(code) => code,
        },
        Command::Report {
            input,
            scenario,
            seed,
            out,
        } => {
            let text = if let Some(path) = input {
                match read_rows(&path) {
                    Ok(rows) => summarize_rows(&rows),
                    Err(e) => {
                        eprintln!("{}: {e}", path.display());
                        return ExitCode::from(EXIT_INVALID);
                    }
                }
            } else {
                let path = scenario.expect("clap requires --input or --scenario");
                let sc = match load(&path) {
                    Ok(s) => s,
                    Err(code) => return code,
                };
                let opts = RunOptions {
                    seed,
                    ..RunOptions::default()
                };
                match run_scenario(&sc, &opts) {
                    Ok(r) => r.summary(),
                    Err(e) => {
                        eprintln!("error: {e}");
                        return ExitCode::from(EXIT_RUNTIME);
                    }
                }
            };
            emit(&text, out.as_ref())
        }
    }
}
