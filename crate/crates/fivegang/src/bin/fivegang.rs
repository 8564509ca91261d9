//! Thin command-line front end over the library runner.
//!
//! Exit codes: 0 success, 2 validation failure, 3 runtime failure, 4 I/O
//! failure. `FIVEGANG_LOG={error,info,debug}` controls diagnostics on
//! stderr; the metrics streams are never routed through the logger.

use clap::{Args, Parser, Subcommand};
use fivegang::runner::{self, RunError};
use fivegang::scenario::Scenario;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "fivegang", version, about = "Industrial sensor-network simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ScenarioArgs {
    /// Scenario JSON file.
    #[arg(long)]
    scenario: PathBuf,
    /// Replace the scenario's seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Parse and cross-check a scenario file.
    Validate {
        #[command(flatten)]
        scenario: ScenarioArgs,
    },
    /// Run a scenario and write metrics.jsonl + report.json.
    Run {
        #[command(flatten)]
        scenario: ScenarioArgs,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        /// Also write metrics.csv.
        #[arg(long)]
        csv: bool,
    },
    /// Rerun a scenario over a list of values for one scalar parameter.
    Sweep {
        #[command(flatten)]
        scenario: ScenarioArgs,
        /// Dotted path of the scalar to vary, e.g. links[0].loss_probability.
        #[arg(long)]
        param: String,
        /// Comma-separated values, e.g. 0,0.1,0.2.
        #[arg(long)]
        values: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        csv: bool,
    },
    /// Run a scenario and print the device-cloud state as JSON.
    Dump {
        #[command(flatten)]
        scenario: ScenarioArgs,
        /// Write to a file instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load(args: &ScenarioArgs) -> Result<Scenario, RunError> {
    let mut scenario = runner::load_scenario(&args.scenario)?;
    if let Some(seed) = args.seed {
        scenario.seed = seed;
    }
    Ok(scenario)
}

fn parse_values(text: &str) -> Vec<serde_json::Value> {
    text.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            serde_json::from_str(s).unwrap_or_else(|_| serde_json::Value::String(s.to_string()))
        })
        .collect()
}

fn fail(err: &RunError) -> ExitCode {
    // Machine-readable error record on stderr.
    let record = serde_json::json!({
        "type": "error",
        "exit_code": err.exit_code(),
        "message": err.to_string(),
    });
    eprintln!("{record}");
    ExitCode::from(err.exit_code() as u8)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter("FIVEGANG_LOG")).init();
    let cli = Cli::parse();
    match cli.command {
        Command::Validate { scenario } => match load(&scenario) {
            Ok(s) => {
                println!(
                    "ok: scenario {} (seed {}, duration {} us, hash {})",
                    scenario.scenario.display(),
                    s.seed,
                    s.duration_us,
                    runner::scenario_hash(&s)
                );
                ExitCode::SUCCESS
            }
            Err(e) => fail(&e),
        },
        Command::Run { scenario, out, csv } => {
            let s = match load(&scenario) {
                Ok(s) => s,
                Err(e) => return fail(&e),
            };
            log::info!("running scenario {}", scenario.scenario.display());
            match runner::run(&s, &out, csv) {
                Ok(report) => {
                    let sent: u64 = report.snapshot.flows.values().map(|c| c.sent).sum();
                    let delivered: u64 =
                        report.snapshot.flows.values().map(|c| c.delivered).sum();
                    println!(
                        "done: {} flows, {sent} sent / {delivered} delivered, {} alarms, report at {}",
                        report.snapshot.flows.len(),
                        report.snapshot.alarms_raised,
                        out.join("report.json").display()
                    );
                    ExitCode::SUCCESS
                }
                Err(e) => fail(&e),
            }
        }
        Command::Sweep {
            scenario,
            param,
            values,
            out,
            csv,
        } => {
            let s = match load(&scenario) {
                Ok(s) => s,
                Err(e) => return fail(&e),
            };
            let values = parse_values(&values);
            match runner::sweep(&s, &param, &values, &out, csv) {
                Ok(reports) => {
                    println!(
                        "done: {} runs over {param}, aggregate at {}",
                        reports.len(),
                        out.join("sweep.csv").display()
                    );
                    ExitCode::SUCCESS
                }
                Err(e) => fail(&e),
            }
        }
        Command::Dump { scenario, out } => {
            let s = match load(&scenario) {
                Ok(s) => s,
                Err(e) => return fail(&e),
            };
            match runner::dump(&s) {
                Ok(state) => {
                    let text =
                        serde_json::to_string_pretty(&state).expect("state serializes");
                    match out {
                        Some(path) => {
                            if let Err(e) = std::fs::write(&path, text) {
                                return fail(&RunError::Io {
                                    path: path.display().to_string(),
                                    source: e,
                                });
                            }
                            println!("cloud state written to {}", path.display());
                        }
                        None => println!("{text}"),
                    }
                    ExitCode::SUCCESS
                }
                Err(e) => fail(&e),
            }
        }
    }
}
