//! Scenario files: topology, functions, chains and policies in TOML.
//!
//! ```toml
//! seed = 7
//! iterations = 20
//! sizes = [1000, 1000000]
//!
//! [defaults]
//! ttl_ms = 10000
//!
//! [[endpoints]]
//! id = "store"
//! rtt_ms = 50
//! bandwidth = 125000
//! location = "remote"
//!
//! [[functions]]
//! name = "resize"
//! constants = { CREDS = "c1", SRC = "photo.jpg" }
//! steps = [
//!   { kind = "get", endpoint = "store", credentials = "const:CREDS", object = "const:SRC" },
//!   { kind = "compute", duration_ms = 5 },
//! ]
//!
//! [[chains]]
//! name = "upload"
//! entry = "ingest"
//! nodes = [{ name = "ingest", runtime_ms = 80 }, { name = "resize", runtime_ms = 40 }]
//! edges = [{ from = "ingest", to = "resize", trigger = "s3" }]
//! ```
//!
//! Objects without an explicit size in their endpoint's `objects` table, and
//! `put` steps without `bytes`, take the size of the current grid point.

use std::collections::BTreeMap;
use std::fmt;
use std::ops::Range;
use std::path::{Path, PathBuf};

use serde::Deserialize;
use thiserror::Error;
use toml::Spanned;

use crate::freshen::{ConsumePolicy, FreshenMode};
use crate::function::{FunctionDef, Operand, Step, StepKind};
use crate::netsim::{Estimator, Location, NetConfig, SimEndpoint, WarmPolicy};
use crate::predictor::{ChainEdge, ChainNode, ChainSpec, LedgerConfig, ServiceClass, TriggerModel};
use crate::runtime::RuntimeConfig;
use crate::time::{SimDuration, SimTime};
use crate::value::Value;

/// Stand-in size grid (bytes) used when a scenario lists no sizes.
pub const DEFAULT_SIZES: [u64; 6] = [1_000, 10_000, 100_000, 1_000_000, 5_000_000, 10_000_000];

/// A problem found in a scenario file, with its position when known.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Diagnostic {
    pub file: Option<PathBuf>,
    /// 1-based line and column.
    pub position: Option<(usize, usize)>,
    /// Logical location, e.g. `functions[0].steps[2]`.
    pub location: String,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some(file) = &self.file {
            write!(f, "{}:", file.display())?;
        }
        if let Some((line, col)) = self.position {
            write!(f, "{line}:{col}:")?;
        }
        if self.file.is_some() || self.position.is_some() {
            f.write_str(" ")?;
        }
        if !self.location.is_empty() {
            write!(f, "{}: ", self.location)?;
        }
        f.write_str(&self.message)
    }
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}", render(.0))]
    Invalid(Vec<Diagnostic>),
}

fn render(diags: &[Diagnostic]) -> String {
    diags.iter().map(ToString::to_string).collect::<Vec<_>>().join("\n")
}

impl ScenarioError {
    pub fn diagnostics(&self) -> &[Diagnostic] {
        match self {
            ScenarioError::Invalid(d) => d,
            ScenarioError::Io { .. } => &[],
        }
    }
}

// ---------------------------------------------------------------------------
// file layout

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    name: Option<String>,
    seed: Option<u64>,
    iterations: Option<Spanned<i64>>,
    sizes: Option<Vec<u64>>,
    modes: Option<Vec<Spanned<String>>>,
    idle_gap_ms: Option<f64>,
    prediction_depth: Option<usize>,
    #[serde(default)]
    defaults: RawDefaults,
    #[serde(default)]
    warm_policy: RawWarmPolicy,
    #[serde(default)]
    suppression: RawSuppression,
    #[serde(default)]
    netsim: RawNet,
    #[serde(default)]
    triggers: BTreeMap<String, RawTrigger>,
    #[serde(default)]
    endpoints: Vec<RawEndpoint>,
    #[serde(default)]
    functions: Vec<RawFunction>,
    #[serde(default)]
    chains: Vec<RawChain>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDefaults {
    ttl_ms: Option<f64>,
    consume: Option<Spanned<String>>,
    wait_timeout_ms: Option<f64>,
    cold_start_ms: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawWarmPolicy {
    enabled: Option<bool>,
    cwnd_cap: Option<u32>,
    estimator: Option<Spanned<String>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSuppression {
    window: Option<usize>,
    threshold: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawNet {
    initial_window: Option<u32>,
    mss: Option<u32>,
    max_cwnd: Option<u32>,
    min_rto_ms: Option<f64>,
    keepalive_interval_ms: Option<f64>,
    history_horizon_ms: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum RawTrigger {
    Median(f64),
    Full { median_ms: f64, jitter_ms: Option<f64> },
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEndpoint {
    id: Spanned<String>,
    rtt_ms: f64,
    bandwidth: f64,
    location: Option<Spanned<String>>,
    jitter: Option<f64>,
    tls: Option<bool>,
    #[serde(default)]
    down: Vec<[f64; 2]>,
    #[serde(default)]
    kill_connections_at_ms: Vec<f64>,
    #[serde(default)]
    objects: BTreeMap<String, u64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawFunction {
    name: Spanned<String>,
    ttl_ms: Option<f64>,
    class: Option<Spanned<String>>,
    #[serde(default)]
    args: Option<String>,
    #[serde(default)]
    constants: BTreeMap<String, toml::Value>,
    #[serde(default)]
    steps: Vec<RawStep>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawStep {
    kind: Spanned<String>,
    endpoint: Option<Spanned<String>>,
    credentials: Option<Spanned<String>>,
    object: Option<Spanned<String>>,
    payload: Option<Spanned<String>>,
    bytes: Option<u64>,
    duration_ms: Option<f64>,
    inputs: Option<Vec<Spanned<String>>>,
    ttl_ms: Option<f64>,
    store_as: Option<String>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawChain {
    name: Spanned<String>,
    entry: String,
    #[serde(default)]
    nodes: Vec<RawNode>,
    #[serde(default)]
    edges: Vec<RawEdge>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawNode {
    name: String,
    runtime_ms: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEdge {
    from: Spanned<String>,
    to: String,
    trigger: Spanned<String>,
    probability: Option<f64>,
}

// ---------------------------------------------------------------------------
// validated form

/// A function plus the harness-side settings that travel with it.
#[derive(Debug, Clone, PartialEq)]
pub struct FunctionSetup {
    pub def: FunctionDef,
    pub class: ServiceClass,
    pub args: Value,
    /// `put` steps whose payload size follows the size grid.
    pub sized_puts: Vec<usize>,
}

impl FunctionSetup {
    /// The function with grid-sized payloads set to `size`.
    pub fn for_size(&self, size: u64) -> FunctionDef {
        let mut def = self.def.clone();
        for &i in &self.sized_puts {
            if let StepKind::DataPut { payload_bytes, .. } = &mut def.steps[i].kind {
                *payload_bytes = size;
            }
        }
        def
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub seed: u64,
    pub iterations: usize,
    pub sizes: Vec<u64>,
    pub modes: Vec<FreshenMode>,
    /// Quiet time between the priming invocation and the measured trigger.
    pub idle_gap: SimDuration,
    pub prediction_depth: usize,
    pub functions: Vec<FunctionSetup>,
    pub chains: Vec<ChainSpec>,
    /// Probability that each chain edge actually fires, keyed by (from, to).
    pub edge_probability: BTreeMap<(String, String), f64>,
    pub triggers: TriggerModel,
    pub endpoints: Vec<SimEndpoint>,
    pub net: NetConfig,
    pub runtime: RuntimeConfig,
    pub ledger: LedgerConfig,
}

impl Scenario {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ScenarioError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
            path: path.to_owned(),
            source,
        })?;
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("scenario");
        Self::parse(&text, Some(path), stem)
    }

    /// Parses and validates scenario text. `file` is only used in diagnostics.
    pub fn parse(text: &str, file: Option<&Path>, default_name: &str) -> Result<Self, ScenarioError> {
        let mut v = Validator {
            text,
            file: file.map(Path::to_path_buf),
            diags: Vec::new(),
        };
        let raw: RawScenario = match toml::from_str(text) {
            Ok(raw) => raw,
            Err(e) => {
                let position = e.span().map(|s| v.position(s.start));
                return Err(ScenarioError::Invalid(vec![Diagnostic {
                    file: v.file,
                    position,
                    location: String::new(),
                    message: e.message().trim().to_owned(),
                }]));
            }
        };
        let scenario = v.build(raw, default_name);
        if v.diags.is_empty() {
            Ok(scenario)
        } else {
            Err(ScenarioError::Invalid(v.diags))
        }
    }

    pub fn function(&self, name: &str) -> Option<&FunctionSetup> {
        self.functions.iter().find(|f| f.def.name == name)
    }

    /// The chain edge that triggers `function`, if any.
    pub fn upstream_of(&self, function: &str) -> Option<(&ChainSpec, &ChainEdge)> {
        self.chains
            .iter()
            .find_map(|c| c.edges.iter().find(|e| e.to == function).map(|e| (c, e)))
    }

    pub fn edge_probability(&self, edge: &ChainEdge) -> f64 {
        self.edge_probability
            .get(&(edge.from.clone(), edge.to.clone()))
            .copied()
            .unwrap_or(1.0)
    }
}

/// Loads `path` and reports every problem found.
pub fn validate_scenario(path: impl AsRef<Path>) -> Result<Scenario, ScenarioError> {
    Scenario::load(path)
}

struct Validator<'a> {
    text: &'a str,
    file: Option<PathBuf>,
    diags: Vec<Diagnostic>,
}

impl Validator<'_> {
    fn position(&self, offset: usize) -> (usize, usize) {
        let before = &self.text[..offset.min(self.text.len())];
        let line = before.matches('\n').count() + 1;
        let col = before.rfind('\n').map_or(before.len(), |nl| before.len() - nl - 1) + 1;
        (line, col)
    }

    fn error(&mut self, span: Option<Range<usize>>, location: impl Into<String>, message: impl Into<String>) {
        self.diags.push(Diagnostic {
            file: self.file.clone(),
            position: span.map(|s| self.position(s.start)),
            location: location.into(),
            message: message.into(),
        });
    }

    fn parse_or<T: std::str::FromStr<Err = String>>(&mut self, s: &Option<Spanned<String>>, location: &str, default: T) -> T {
        match s {
            None => default,
            Some(s) => match s.get_ref().parse() {
                Ok(v) => v,
                Err(e) => {
                    self.error(Some(s.span()), location, e);
                    default
                }
            },
        }
    }

    fn positive_ms(&mut self, ms: Option<f64>, location: &str, default: SimDuration) -> SimDuration {
        match ms {
            None => default,
            Some(x) if x.is_finite() && x >= 0.0 => SimDuration::from_millis(x),
            Some(x) => {
                self.error(None, location, format!("must be a non-negative number of milliseconds, got {x}"));
                default
            }
        }
    }

    fn operand(&mut self, s: &Spanned<String>, location: &str) -> Option<Operand> {
        match s.get_ref().parse() {
            Ok(op) => Some(op),
            Err(e) => {
                self.error(Some(s.span()), location, e.to_string());
                None
            }
        }
    }

    fn build(&mut self, raw: RawScenario, default_name: &str) -> Scenario {
        let iterations = match &raw.iterations {
            None => 20,
            Some(n) if *n.get_ref() >= 1 => *n.get_ref() as usize,
            Some(n) => {
                self.error(Some(n.span()), "iterations", format!("must be at least 1, got {}", n.get_ref()));
                1
            }
        };
        let sizes = raw.sizes.clone().unwrap_or_else(|| DEFAULT_SIZES.to_vec());
        if sizes.is_empty() {
            self.error(None, "sizes", "must list at least one size");
        }
        let modes = match &raw.modes {
            None => FreshenMode::ALL.to_vec(),
            Some(list) => list
                .iter()
                .enumerate()
                .filter_map(|(i, m)| match m.get_ref().parse() {
                    Ok(mode) => Some(mode),
                    Err(e) => {
                        self.error(Some(m.span()), format!("modes[{i}]"), e);
                        None
                    }
                })
                .collect(),
        };

        let net = self.net(&raw.netsim);
        let warm_policy = WarmPolicy {
            enabled: raw.warm_policy.enabled.unwrap_or(true),
            cwnd_cap: raw.warm_policy.cwnd_cap.unwrap_or(net.max_cwnd),
            estimator: self.parse_or(&raw.warm_policy.estimator, "warm_policy.estimator", Estimator::PacketPair),
        };
        if warm_policy.cwnd_cap < net.initial_window {
            self.error(
                None,
                "warm_policy.cwnd_cap",
                format!("cap {} is below the initial window {}", warm_policy.cwnd_cap, net.initial_window),
            );
        }
        let runtime = RuntimeConfig {
            mode: FreshenMode::Full,
            default_ttl: self.positive_ms(raw.defaults.ttl_ms, "defaults.ttl_ms", SimDuration::ZERO),
            consume: self.parse_or(&raw.defaults.consume, "defaults.consume", ConsumePolicy::PersistUntilTtl),
            warm_policy,
            wait_timeout: raw
                .defaults
                .wait_timeout_ms
                .map(|ms| self.positive_ms(Some(ms), "defaults.wait_timeout_ms", SimDuration::ZERO)),
            cold_start_delay: self.positive_ms(raw.defaults.cold_start_ms, "defaults.cold_start_ms", SimDuration::ZERO),
        };
        let defaults = LedgerConfig::default();
        let ledger = LedgerConfig {
            window: raw.suppression.window.unwrap_or(defaults.window),
            threshold: raw.suppression.threshold.unwrap_or(defaults.threshold),
        };
        if ledger.window == 0 || !(0.0..=1.0).contains(&ledger.threshold) {
            self.error(None, "suppression", "window must be positive and threshold within [0, 1]");
        }

        let mut triggers = TriggerModel::default();
        for (name, t) in &raw.triggers {
            let (median, jitter) = match t {
                RawTrigger::Median(m) => (*m, 0.0),
                RawTrigger::Full { median_ms, jitter_ms } => (*median_ms, jitter_ms.unwrap_or(0.0)),
            };
            if let Err(e) = triggers.insert(name.clone(), median, jitter) {
                self.error(None, format!("triggers.{name}"), e.to_string());
            }
        }

        let endpoints = self.endpoints(&raw.endpoints);
        let functions = self.functions(&raw.functions, &endpoints);
        let (chains, edge_probability) = self.chains(&raw.chains, &triggers);

        Scenario {
            name: raw.name.unwrap_or_else(|| default_name.to_owned()),
            seed: raw.seed.unwrap_or(0),
            iterations,
            sizes,
            modes,
            idle_gap: self.positive_ms(raw.idle_gap_ms, "idle_gap_ms", SimDuration::from_millis(5_000.0)),
            prediction_depth: raw.prediction_depth.unwrap_or(1).max(1),
            functions,
            chains,
            edge_probability,
            triggers,
            endpoints,
            net,
            runtime,
            ledger,
        }
    }

    fn net(&mut self, raw: &RawNet) -> NetConfig {
        let d = NetConfig::default();
        let net = NetConfig {
            initial_window: raw.initial_window.unwrap_or(d.initial_window),
            mss: raw.mss.unwrap_or(d.mss),
            initial_ssthresh: d.initial_ssthresh,
            max_cwnd: raw.max_cwnd.unwrap_or(d.max_cwnd),
            min_rto: self.positive_ms(raw.min_rto_ms, "netsim.min_rto_ms", d.min_rto),
            keepalive_interval: self.positive_ms(raw.keepalive_interval_ms, "netsim.keepalive_interval_ms", d.keepalive_interval),
            history_horizon: self.positive_ms(raw.history_horizon_ms, "netsim.history_horizon_ms", d.history_horizon),
        };
        if net.initial_window == 0 || net.mss == 0 || net.max_cwnd < net.initial_window {
            self.error(None, "netsim", "initial_window and mss must be positive and max_cwnd >= initial_window");
        }
        net
    }

    fn endpoints(&mut self, raw: &[RawEndpoint]) -> Vec<SimEndpoint> {
        let mut out: Vec<SimEndpoint> = Vec::new();
        for (i, r) in raw.iter().enumerate() {
            let loc = format!("endpoints[{i}]");
            if out.iter().any(|e| e.id.as_str() == r.id.get_ref()) {
                self.error(Some(r.id.span()), &loc, format!("duplicate endpoint `{}`", r.id.get_ref()));
                continue;
            }
            let location = self.parse_or(&r.location, &format!("{loc}.location"), Location::Remote);
            let mut ep = match SimEndpoint::new(r.id.get_ref().as_str(), r.rtt_ms, r.bandwidth, location) {
                Ok(ep) => ep,
                Err(e) => {
                    self.error(Some(r.id.span()), &loc, e.to_string());
                    continue;
                }
            };
            let jitter = r.jitter.unwrap_or(0.0);
            if !(0.0..1.0).contains(&jitter) {
                self.error(Some(r.id.span()), format!("{loc}.jitter"), "must be within [0, 1)");
            }
            ep.packet_pair_jitter = jitter;
            ep.tls = r.tls.unwrap_or(false);
            ep.objects = r.objects.clone();
            for [from, to] in &r.down {
                ep.down.push((SimTime::from_millis(*from), SimTime::from_millis(*to)));
            }
            for at in &r.kill_connections_at_ms {
                ep.connection_kills.push(SimTime::from_millis(*at));
            }
            out.push(ep);
        }
        out
    }

    fn functions(&mut self, raw: &[RawFunction], endpoints: &[SimEndpoint]) -> Vec<FunctionSetup> {
        let mut out: Vec<FunctionSetup> = Vec::new();
        for (fi, rf) in raw.iter().enumerate() {
            let floc = format!("functions[{fi}]");
            if out.iter().any(|f| &f.def.name == rf.name.get_ref()) {
                self.error(Some(rf.name.span()), &floc, format!("duplicate function `{}`", rf.name.get_ref()));
                continue;
            }
            let mut def = FunctionDef::builder(rf.name.get_ref().as_str()).build_unchecked();
            def.ttl = rf.ttl_ms.map(|ms| self.positive_ms(Some(ms), &format!("{floc}.ttl_ms"), SimDuration::ZERO));
            for (name, v) in &rf.constants {
                let value = match v {
                    toml::Value::String(s) => Value::text(s),
                    toml::Value::Integer(i) => Value::Int(*i),
                    toml::Value::Boolean(b) => Value::Bool(*b),
                    other => Value::text(other.to_string()),
                };
                def.constants.insert(name.clone(), value);
            }
            let mut sized_puts = Vec::new();
            let mut ok = true;
            for (si, rs) in rf.steps.iter().enumerate() {
                let sloc = format!("{floc}.steps[{si}]");
                match self.step(rs, &sloc, endpoints) {
                    Some((step, sized)) => {
                        if sized {
                            sized_puts.push(si);
                        }
                        def.steps.push(step);
                    }
                    None => ok = false,
                }
            }
            if !ok {
                continue;
            }
            if let Err(e) = def.validate() {
                let loc = match e.step() {
                    Some(s) => format!("{floc}.steps[{s}]"),
                    None => floc.clone(),
                };
                self.error(Some(rf.name.span()), loc, format!("function `{}`: {e}", def.name));
                continue;
            }
            let class = self.parse_or(&rf.class, &format!("{floc}.class"), ServiceClass::LatencyInsensitive);
            out.push(FunctionSetup {
                def,
                class,
                args: Value::text(rf.args.clone().unwrap_or_else(|| "request".to_owned())),
                sized_puts,
            });
        }
        out
    }

    fn step(&mut self, rs: &RawStep, loc: &str, endpoints: &[SimEndpoint]) -> Option<(Step, bool)> {
        let mut endpoint = || -> Option<crate::value::EndpointId> {
            let Some(ep) = &rs.endpoint else {
                self.error(Some(rs.kind.span()), loc, format!("`{}` step needs an endpoint", rs.kind.get_ref()));
                return None;
            };
            if !endpoints.iter().any(|e| e.id.as_str() == ep.get_ref()) {
                self.error(
                    Some(ep.span()),
                    loc,
                    format!("step {} references unknown endpoint `{}`", loc_index(loc), ep.get_ref()),
                );
                return None;
            }
            Some(ep.get_ref().as_str().into())
        };
        let kind_name = rs.kind.get_ref().as_str();
        let (kind, sized) = match kind_name {
            "get" => {
                let endpoint = endpoint()?;
                let credentials = match &rs.credentials {
                    Some(c) => Some(self.operand(c, loc)?),
                    None => None,
                };
                let Some(object) = &rs.object else {
                    self.error(Some(rs.kind.span()), loc, "`get` step needs an object");
                    return None;
                };
                let object = self.operand(object, loc)?;
                (
                    StepKind::DataGet {
                        endpoint,
                        credentials,
                        object,
                    },
                    false,
                )
            }
            "put" => {
                let endpoint = endpoint()?;
                let credentials = match &rs.credentials {
                    Some(c) => Some(self.operand(c, loc)?),
                    None => None,
                };
                let (Some(object), Some(payload)) = (&rs.object, &rs.payload) else {
                    self.error(Some(rs.kind.span()), loc, "`put` step needs an object and a payload");
                    return None;
                };
                let object = self.operand(object, loc)?;
                let payload = self.operand(payload, loc)?;
                (
                    StepKind::DataPut {
                        endpoint,
                        credentials,
                        object,
                        payload,
                        payload_bytes: rs.bytes.unwrap_or(0),
                    },
                    rs.bytes.is_none(),
                )
            }
            "compute" => {
                let duration = self.positive_ms(rs.duration_ms, &format!("{loc}.duration_ms"), SimDuration::ZERO);
                let inputs = match &rs.inputs {
                    None => None,
                    Some(list) => Some(list.iter().map(|s| self.operand(s, loc)).collect::<Option<Vec<_>>>()?),
                };
                (StepKind::Compute { duration, inputs }, false)
            }
            other => {
                self.error(
                    Some(rs.kind.span()),
                    loc,
                    format!("unknown step kind `{other}` (expected get, compute or put)"),
                );
                return None;
            }
        };
        let mut step = Step::new(kind);
        step.ttl = rs.ttl_ms.map(|ms| self.positive_ms(Some(ms), &format!("{loc}.ttl_ms"), SimDuration::ZERO));
        step.store_as = rs.store_as.clone();
        Some((step, sized))
    }

    #[allow(clippy::type_complexity)]
    fn chains(&mut self, raw: &[RawChain], triggers: &TriggerModel) -> (Vec<ChainSpec>, BTreeMap<(String, String), f64>) {
        let mut out = Vec::new();
        let mut probs = BTreeMap::new();
        for (ci, rc) in raw.iter().enumerate() {
            let loc = format!("chains[{ci}]");
            let mut chain = ChainSpec {
                name: rc.name.get_ref().clone(),
                entry: rc.entry.clone(),
                nodes: rc
                    .nodes
                    .iter()
                    .map(|n| ChainNode {
                        name: n.name.clone(),
                        median_runtime: SimDuration::from_millis(n.runtime_ms.unwrap_or(0.0)),
                    })
                    .collect(),
                edges: Vec::new(),
            };
            let mut ok = true;
            for (ei, re) in rc.edges.iter().enumerate() {
                if !triggers.contains(re.trigger.get_ref()) {
                    self.error(
                        Some(re.trigger.span()),
                        format!("{loc}.edges[{ei}]"),
                        format!("unknown trigger type `{}`", re.trigger.get_ref()),
                    );
                    ok = false;
                }
                if let Some(p) = re.probability {
                    if !(0.0..=1.0).contains(&p) {
                        self.error(Some(re.from.span()), format!("{loc}.edges[{ei}].probability"), "must be within [0, 1]");
                        ok = false;
                    }
                    probs.insert((re.from.get_ref().clone(), re.to.clone()), p);
                }
                chain.edges.push(ChainEdge {
                    from: re.from.get_ref().clone(),
                    to: re.to.clone(),
                    trigger: re.trigger.get_ref().clone(),
                });
            }
            if let Err(e) = chain.validate() {
                self.error(Some(rc.name.span()), &loc, e.to_string());
                ok = false;
            }
            if ok {
                out.push(chain);
            }
        }
        (out, probs)
    }
}

fn loc_index(loc: &str) -> &str {
    loc.rsplit_once("steps[")
        .map(|(_, rest)| rest.trim_end_matches(']'))
        .unwrap_or(loc)
}
