//! Runs a bundled scenario file through the harness and prints the
//! summary and CSV. Pass another path to run your own.

use std::path::PathBuf;

use freshen::harness::{run_scenario, RunOptions};
use freshen::scenario::Scenario;

fn main() {
    let path = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("scenarios/lambda.toml"));
    let scenario = match Scenario::load(&path) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("{e}");
            std::process::exit(1);
        }
    };
    let report = run_scenario(&scenario, &RunOptions::default()).unwrap();
    print!("{}", report.summary());
    println!();
    print!("{}", report.to_csv().unwrap());
}
