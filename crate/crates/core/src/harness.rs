//! Scenario runner and CSV reports.
//!
//! Every `(function, mode, size)` cell runs the same sequence of iterations:
//! a priming invocation warms the container, the container idles, the
//! upstream trigger fires, and the predictor decides whether to launch
//! freshen ahead of the triggered invocation. Iteration seeds depend on the
//! function, size and iteration index but not on the mode, so modes are
//! compared on identical trigger delays and misprediction draws.

use std::fmt::Write as _;
use std::io;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::freshen::FreshenMode;
use crate::predictor::{AccountingLedger, ChainEvent, PredictError, Predictor, SettleOutcome};
use crate::runtime::{InvocationError, RuntimeConfig, RuntimeContext};
use crate::scenario::Scenario;
use crate::sim::{run_episode, Episode, FreshenLaunch};
use crate::time::{SimDuration, SimTime};

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("function `{0}` is not runnable: {1}")]
    Function(String, String),
    #[error("{function} ({mode}, {size} B), iteration {iteration}: invocation failed at step {}: {}", .source.step, .source.error)]
    Invocation {
        function: String,
        mode: &'static str,
        size: u64,
        iteration: usize,
        source: InvocationError,
    },
    #[error(transparent)]
    Predict(#[from] PredictError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Overrides applied on top of a scenario file.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub modes: Option<Vec<FreshenMode>>,
    pub seed: Option<u64>,
    pub iterations: Option<usize>,
}

/// Measurements for one `(function, mode, size)` cell.
#[derive(Debug, Clone, PartialEq)]
pub struct CellResult {
    pub function: String,
    pub mode: FreshenMode,
    pub size: u64,
    /// End-to-end duration of each invocation that ran, in ms.
    pub durations_ms: Vec<f64>,
    /// Time spent in steps covered by the freshen plan, per invocation.
    pub freshen_step_ms: Vec<f64>,
    pub cache_hits: u64,
    pub cache_misses: u64,
    pub upstream_fetches: u64,
    pub actions_performed: u64,
    pub actions_skipped: u64,
    pub actions_failed: u64,
    pub directives: u64,
    pub suppressed: u64,
    pub mispredictions: u64,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentReport {
    pub scenario: String,
    pub seed: u64,
    pub cells: Vec<CellResult>,
}

/// One CSV line. Floats are pre-formatted so output is byte-stable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub function: String,
    pub mode: String,
    pub size_bytes: u64,
    pub iterations: usize,
    pub median_ms: String,
    pub p90_ms: String,
    pub min_ms: String,
    pub max_ms: String,
    pub freshen_step_median_ms: String,
    pub saving_ms: String,
    pub improvement_pct: String,
    pub cache_hits: u64,
    pub cache_misses: u64,
    pub upstream_fetches: u64,
    pub actions_performed: u64,
    pub actions_skipped: u64,
    pub actions_failed: u64,
    pub directives: u64,
    pub suppressed: u64,
    pub mispredictions: u64,
    pub confidence: String,
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { (v[n / 2 - 1] + v[n / 2]) / 2.0 })
}

/// Nearest-rank percentile, `p` in `(0, 100]`.
pub fn percentile(values: &[f64], p: f64) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let rank = ((p / 100.0) * v.len() as f64).ceil().max(1.0) as usize;
    Some(v[rank.min(v.len()) - 1])
}

fn fmt3(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.3}")).unwrap_or_default()
}

impl CellResult {
    pub fn median_ms(&self) -> Option<f64> {
        median(&self.durations_ms)
    }

    pub fn freshen_step_median_ms(&self) -> Option<f64> {
        median(&self.freshen_step_ms)
    }
}

impl ExperimentReport {
    pub fn cell(&self, function: &str, mode: FreshenMode, size: u64) -> Option<&CellResult> {
        self.cells
            .iter()
            .find(|c| c.function == function && c.mode == mode && c.size == size)
    }

    /// `(saving_ms, improvement_pct)` of a cell against its disabled baseline.
    pub fn saving(&self, cell: &CellResult) -> Option<(f64, f64)> {
        let base = self.cell(&cell.function, FreshenMode::Disabled, cell.size)?.median_ms()?;
        let ours = cell.median_ms()?;
        let saving = base - ours;
        let pct = if base > 0.0 { saving / base * 100.0 } else { 0.0 };
        Some((saving, pct))
    }

    pub fn rows(&self) -> Vec<ReportRow> {
        self.cells
            .iter()
            .map(|c| {
                let saving = self.saving(c);
                ReportRow {
                    function: c.function.clone(),
                    mode: c.mode.as_str().to_string(),
                    size_bytes: c.size,
                    iterations: c.durations_ms.len(),
                    median_ms: fmt3(c.median_ms()),
                    p90_ms: fmt3(percentile(&c.durations_ms, 90.0)),
                    min_ms: fmt3(c.durations_ms.iter().copied().reduce(f64::min)),
                    max_ms: fmt3(c.durations_ms.iter().copied().reduce(f64::max)),
                    freshen_step_median_ms: fmt3(c.freshen_step_median_ms()),
                    saving_ms: fmt3(saving.map(|s| s.0)),
                    improvement_pct: fmt3(saving.map(|s| s.1)),
                    cache_hits: c.cache_hits,
                    cache_misses: c.cache_misses,
                    upstream_fetches: c.upstream_fetches,
                    actions_performed: c.actions_performed,
                    actions_skipped: c.actions_skipped,
                    actions_failed: c.actions_failed,
                    directives: c.directives,
                    suppressed: c.suppressed,
                    mispredictions: c.mispredictions,
                    confidence: format!("{:.3}", c.confidence),
                }
            })
            .collect()
    }

    pub fn to_csv(&self) -> Result<String, HarnessError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for row in self.rows() {
            w.serialize(row)?;
        }
        let bytes = w.into_inner().map_err(|e| HarnessError::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<(), HarnessError> {
        std::fs::write(path, self.to_csv()?)?;
        Ok(())
    }

    pub fn summary(&self) -> String {
        let mut out = format!("scenario {} (seed {})\n", self.scenario, self.seed);
        out.push_str(&summarize_rows(&self.rows()));
        out
    }
}

pub fn read_rows(path: impl AsRef<Path>) -> Result<Vec<ReportRow>, HarnessError> {
    let mut r = csv::Reader::from_path(path)?;
    let rows = r.deserialize().collect::<Result<Vec<ReportRow>, _>>()?;
    Ok(rows)
}

/// Plain-text table of the columns people usually look at first.
pub fn summarize_rows(rows: &[ReportRow]) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<16} {:<14} {:>10} {:>5} {:>12} {:>12} {:>10} {:>6} {:>6}",
        "function", "mode", "size", "n", "median_ms", "saving_ms", "improve%", "hits", "sup"
    );
    for r in rows {
        let _ = writeln!(
            out,
            "{:<16} {:<14} {:>10} {:>5} {:>12} {:>12} {:>10} {:>6} {:>6}",
            r.function,
            r.mode,
            r.size_bytes,
            r.iterations,
            r.median_ms,
            r.saving_ms,
            r.improvement_pct,
            r.cache_hits,
            r.suppressed
        );
    }
    out
}

/// Seed for one iteration. Mode is deliberately absent so cells pair up.
pub fn iteration_seed(seed: u64, function: &str, size: u64, iteration: usize) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(function.as_bytes());
    h.update([0]);
    h.update(size.to_le_bytes());
    h.update((iteration as u64).to_le_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("digest has 32 bytes"))
}

pub fn run_scenario(scenario: &Scenario, opts: &RunOptions) -> Result<ExperimentReport, HarnessError> {
    let seed = opts.seed.unwrap_or(scenario.seed);
    let modes = opts.modes.clone().unwrap_or_else(|| scenario.modes.clone());
    let iterations = opts.iterations.unwrap_or(scenario.iterations);

    let mut jobs = Vec::new();
    for f in &scenario.functions {
        for &mode in &modes {
            for &size in &scenario.sizes {
                jobs.push((f.def.name.clone(), mode, size));
            }
        }
    }
    let cells = jobs
        .par_iter()
        .map(|(f, mode, size)| run_cell(scenario, f, *mode, *size, seed, iterations))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(ExperimentReport {
        scenario: scenario.name.clone(),
        seed,
        cells,
    })
}

/// Runs every iteration of one cell. The predictor and its ledger persist
/// across iterations; each iteration gets a fresh container and network.
pub fn run_cell(
    scenario: &Scenario,
    function: &str,
    mode: FreshenMode,
    size: u64,
    seed: u64,
    iterations: usize,
) -> Result<CellResult, HarnessError> {
    let setup = scenario
        .function(function)
        .ok_or_else(|| HarnessError::Function(function.to_string(), "not defined".into()))?;
    let def = setup.for_size(size);
    let upstream = scenario.upstream_of(function);

    let mut ledger = AccountingLedger::new(scenario.ledger.clone());
    ledger.set_class(function, setup.class);
    let mut predictor = Predictor::new(scenario.chains.clone(), scenario.triggers.clone(), ledger);
    predictor.depth = scenario.prediction_depth;

    let mut cell = CellResult {
        function: function.to_string(),
        mode,
        size,
        durations_ms: Vec::new(),
        freshen_step_ms: Vec::new(),
        cache_hits: 0,
        cache_misses: 0,
        upstream_fetches: 0,
        actions_performed: 0,
        actions_skipped: 0,
        actions_failed: 0,
        directives: 0,
        suppressed: 0,
        mispredictions: 0,
        confidence: 1.0,
    };

    for iter in 0..iterations {
        let iseed = iteration_seed(seed, function, size, iter);
        let mut rng = ChaCha8Rng::seed_from_u64(iseed);
        let endpoints = scenario
            .endpoints
            .iter()
            .cloned()
            .map(|e| e.with_default_object_size(size));
        let mut net = crate::netsim::NetSim::new(scenario.net.clone(), endpoints, iseed);
        let config = RuntimeConfig {
            mode,
            ..scenario.runtime.clone()
        };
        let mut ctx = RuntimeContext::init(def.clone(), config, SimTime::ZERO)
            .map_err(|e| HarnessError::Function(function.to_string(), e.to_string()))?;

        let fail = |source| HarnessError::Invocation {
            function: function.to_string(),
            mode: mode.as_str(),
            size,
            iteration: iter,
            source,
        };

        let prime = run_episode(
            &mut ctx,
            &mut net,
            Episode::invocation(setup.args.clone(), SimTime::ZERO).with_mode(FreshenMode::Disabled),
        );
        if let Some(Err(e)) = prime.result {
            return Err(fail(e));
        }
        let trigger = prime.end + scenario.idle_gap;

        // Draws happen in every mode so all modes see the same schedule.
        let (delay, invoked) = match upstream {
            Some((_, edge)) => {
                let delay = scenario.triggers.sample(&edge.trigger, &mut rng)?;
                let p = scenario.edge_probability(edge);
                (delay, rng.random_bool(p.clamp(0.0, 1.0)))
            }
            None => (SimDuration::ZERO, true),
        };
        let arrival = trigger + delay;

        let mut launch = None;
        if mode != FreshenMode::Disabled {
            match upstream {
                Some((_, edge)) => {
                    let event = ChainEvent::TriggerFired {
                        from: edge.from.clone(),
                        to: function.to_string(),
                    };
                    for p in predictor.predict(&event, trigger)? {
                        if p.directive.target != function {
                            continue;
                        }
                        if p.issued {
                            cell.directives += 1;
                            launch = Some(FreshenLaunch {
                                plan: ctx.plan().clone(),
                                issue_at: p.directive.issue_at,
                                deadline: Some(p.directive.deadline),
                            });
                        } else {
                            cell.suppressed += 1;
                        }
                    }
                }
                None => {
                    // Nothing predicts this function: freshen starts with the request.
                    cell.directives += 1;
                    launch = Some(FreshenLaunch {
                        plan: ctx.plan().clone(),
                        issue_at: arrival,
                        deadline: Some(arrival),
                    });
                }
            }
        }

        let episode = match (invoked, launch) {
            (true, launch) => {
                let mut ep = Episode::invocation(setup.args.clone(), arrival).with_trigger(trigger);
                if let Some(l) = launch {
                    ep = ep.with_launch(l);
                }
                Some(ep)
            }
            (false, Some(l)) => Some(Episode::freshen_only(l)),
            (false, None) => None,
        };
        if let Some(ep) = episode {
            let out = run_episode(&mut ctx, &mut net, ep);
            cell.upstream_fetches += out.upstream_fetches as u64;
            if let Some(report) = &out.report {
                cell.actions_performed += report.performed() as u64;
                cell.actions_skipped += report.skipped() as u64;
                cell.actions_failed += report.failed() as u64;
            }
            if let Some(Err(e)) = out.result {
                return Err(fail(e));
            }
            if let Some(rec) = &out.record {
                cell.durations_ms.push(rec.duration().as_millis_f64());
                let covered: SimDuration = ctx
                    .plan()
                    .actions
                    .iter()
                    .filter_map(|a| rec.step_durations.get(a.step).copied())
                    .fold(SimDuration::ZERO, |acc, d| acc + d);
                cell.freshen_step_ms.push(covered.as_millis_f64());
            }
        }

        if mode != FreshenMode::Disabled && upstream.is_some() {
            if invoked {
                predictor.settle(function, SettleOutcome::InvokedInTime);
            } else {
                cell.mispredictions += 1;
                predictor.settle(function, SettleOutcome::Mispredicted);
            }
        }
        let stats = ctx.cache().stats();
        cell.cache_hits += stats.hits;
        cell.cache_misses += stats.misses;
    }
    cell.confidence = predictor.ledger.confidence(function);
    Ok(cell)
}
