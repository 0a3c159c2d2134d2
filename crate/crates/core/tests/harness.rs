use freshen::freshen::FreshenMode;
use freshen::harness::{iteration_seed, run_scenario, RunOptions};
use freshen::scenario::Scenario;

const FLAKY: &str = r#"
name = "flaky"
seed = 3
iterations = 60
sizes = [200000]
modes = ["disabled", "full"]

[defaults]
ttl_ms = 2000

[suppression]
window = 10
threshold = 0.5

[[endpoints]]
id = "store"
rtt_ms = 30
bandwidth = 100000

[[functions]]
name = "f"
constants = { ID = "in", OUT = "out" }
steps = [
  { kind = "get", endpoint = "store", object = "const:ID" },
  { kind = "put", endpoint = "store", object = "const:OUT", payload = "step:0" },
]

[[chains]]
name = "c"
entry = "up"
nodes = [{ name = "up", runtime_ms = 20 }, { name = "f", runtime_ms = 50 }]
edges = [{ from = "up", to = "f", trigger = "sns", probability = 0.3 }]
"#;

#[test]
fn mispredictions_drive_suppression() {
    let sc = Scenario::parse(FLAKY, None, "flaky").unwrap();
    let report = run_scenario(&sc, &RunOptions::default()).unwrap();
    let full = report.cell("f", FreshenMode::Full, 200_000).unwrap();
    let base = report.cell("f", FreshenMode::Disabled, 200_000).unwrap();

    // both modes see the same invocation draws
    assert_eq!(full.durations_ms.len(), base.durations_ms.len());
    assert!(full.durations_ms.len() < 60);
    assert_eq!(full.mispredictions as usize, 60 - full.durations_ms.len());
    assert_eq!(base.directives + base.suppressed + base.mispredictions, 0);

    // with a 30% hit rate the ledger must have started suppressing
    assert!(full.suppressed > 0, "{full:?}");
    assert_eq!(full.directives + full.suppressed, 60);
}

#[test]
fn latency_sensitive_functions_are_never_suppressed() {
    let text = FLAKY.replace("name = \"f\"\nconstants", "name = \"f\"\nclass = \"latency-sensitive\"\nconstants");
    let sc = Scenario::parse(&text, None, "flaky").unwrap();
    let report = run_scenario(&sc, &RunOptions::default()).unwrap();
    let full = report.cell("f", FreshenMode::Full, 200_000).unwrap();
    assert_eq!(full.suppressed, 0);
    assert_eq!(full.directives, 60);
}

#[test]
fn connection_kills_are_survived() {
    let text = FLAKY
        .replace("probability = 0.3", "probability = 1.0")
        .replace("bandwidth = 100000", "bandwidth = 100000\nkill_connections_at_ms = [3000, 9000, 40000]");
    let sc = Scenario::parse(&text, None, "kills").unwrap();
    let report = run_scenario(&sc, &RunOptions { iterations: Some(5), ..RunOptions::default() }).unwrap();
    for c in &report.cells {
        assert_eq!(c.durations_ms.len(), 5, "{}", c.mode.as_str());
    }
}

#[test]
fn unpredicted_functions_freshen_with_the_request() {
    let text = FLAKY.split("[[chains]]").next().unwrap().to_string();
    let sc = Scenario::parse(&text, None, "solo").unwrap();
    let report = run_scenario(&sc, &RunOptions { iterations: Some(6), ..RunOptions::default() }).unwrap();
    let full = report.cell("f", FreshenMode::Full, 200_000).unwrap();
    let base = report.cell("f", FreshenMode::Disabled, 200_000).unwrap();
    assert_eq!(full.directives, 6);
    for (f, b) in full.durations_ms.iter().zip(&base.durations_ms) {
        assert!(f <= b, "{f} > {b}");
    }
}

#[test]
fn iteration_seeds_are_shared_across_modes() {
    let sc = Scenario::parse(FLAKY, None, "flaky").unwrap();
    let a = run_scenario(&sc, &RunOptions { modes: Some(vec![FreshenMode::Disabled]), ..RunOptions::default() }).unwrap();
    let b = run_scenario(&sc, &RunOptions::default()).unwrap();
    assert_eq!(a.cells[0], b.cells[0]);
    assert_ne!(iteration_seed(3, "f", 200_000, 0), iteration_seed(3, "f", 200_000, 1));
}

#[test]
fn csv_has_one_row_per_cell_with_blank_baseline_savings() {
    let sc = Scenario::parse(FLAKY, None, "flaky").unwrap();
    let report = run_scenario(&sc, &RunOptions { iterations: Some(3), modes: Some(vec![FreshenMode::Full]), ..RunOptions::default() }).unwrap();
    let csv = report.to_csv().unwrap();
    let rows: Vec<&str> = csv.lines().collect();
    assert_eq!(rows.len(), 2);
    let header: Vec<&str> = rows[0].split(',').collect();
    let row: Vec<&str> = rows[1].split(',').collect();
    let col = |name: &str| row[header.iter().position(|h| *h == name).unwrap()];
    assert_eq!(col("saving_ms"), "");
    assert_eq!(col("improvement_pct"), "");
    assert_eq!(col("mode"), "full");
}
