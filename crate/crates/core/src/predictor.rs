//! Invocation prediction from chain topology and trigger delays, plus the
//! accounting ledger that suppresses freshen for inaccurate predictions.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

use rand::Rng;
use thiserror::Error;

use crate::time::{SimDuration, SimTime};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PredictError {
    #[error("unknown trigger type `{0}`")]
    UnknownTrigger(String),
    #[error("trigger `{name}` has non-positive delay")]
    NonPositiveDelay { name: String },
    #[error("chain `{chain}` has no node `{node}`")]
    UnknownNode { chain: String, node: String },
    #[error("`{to}` is not reachable from `{from}` in chain `{chain}`")]
    Unreachable { chain: String, from: String, to: String },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TriggerDelay {
    pub median: SimDuration,
    /// Half-width of the uniform jitter applied when sampling.
    pub jitter: SimDuration,
}

/// Trigger type -> delay between the upstream event and the downstream start.
#[derive(Debug, Clone, PartialEq)]
pub struct TriggerModel {
    delays: BTreeMap<String, TriggerDelay>,
}

impl Default for TriggerModel {
    /// Median delays measured on AWS for the four common trigger types.
    fn default() -> Self {
        let mut m = TriggerModel::empty();
        for (name, ms) in [("step-functions", 64.0), ("direct", 60.0), ("sns", 253.0), ("s3", 1282.0)] {
            m.insert(name, ms, 0.0).expect("built-in delays are positive");
        }
        m
    }
}

impl TriggerModel {
    pub fn empty() -> Self {
        Self {
            delays: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, median_ms: f64, jitter_ms: f64) -> Result<(), PredictError> {
        let name = name.into();
        let median = SimDuration::from_millis(median_ms);
        if median.is_zero() {
            return Err(PredictError::NonPositiveDelay { name });
        }
        let jitter = SimDuration::from_millis(jitter_ms).min(median.saturating_sub(SimDuration::TICK));
        self.delays.insert(name, TriggerDelay { median, jitter });
        Ok(())
    }

    pub fn contains(&self, name: &str) -> bool {
        self.delays.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.delays.keys().map(String::as_str)
    }

    /// Median delay of a trigger type.
    pub fn delay(&self, name: &str) -> Result<SimDuration, PredictError> {
        self.delays
            .get(name)
            .map(|d| d.median)
            .ok_or_else(|| PredictError::UnknownTrigger(name.to_owned()))
    }

    /// One realized delay: the median plus uniform jitter.
    pub fn sample(&self, name: &str, rng: &mut impl Rng) -> Result<SimDuration, PredictError> {
        let d = self
            .delays
            .get(name)
            .ok_or_else(|| PredictError::UnknownTrigger(name.to_owned()))?;
        let j = d.jitter.as_micros();
        if j == 0 {
            return Ok(d.median);
        }
        let offset = rng.random_range(0..=2 * j);
        Ok(SimDuration::from_micros(d.median.as_micros() + offset - j))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChainNode {
    pub name: String,
    pub median_runtime: SimDuration,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChainEdge {
    pub from: String,
    pub to: String,
    pub trigger: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ChainError {
    #[error("chain `{chain}`: entry `{entry}` is not a node")]
    MissingEntry { chain: String, entry: String },
    #[error("chain `{chain}`: entry `{entry}` has an incoming edge from `{from}`")]
    EntryHasIncoming { chain: String, entry: String, from: String },
    #[error("chain `{chain}`: edge {from} -> {to} references unknown node `{node}`")]
    DanglingEdge { chain: String, from: String, to: String, node: String },
    #[error("chain `{chain}`: duplicate node `{node}`")]
    DuplicateNode { chain: String, node: String },
    #[error("chain `{chain}` has a cycle: {}", cycle.join(" -> "))]
    Cycle { chain: String, cycle: Vec<String> },
}

/// A function chain: nodes joined by trigger edges.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainSpec {
    pub name: String,
    pub entry: String,
    pub nodes: Vec<ChainNode>,
    pub edges: Vec<ChainEdge>,
}

impl ChainSpec {
    /// `n` functions `f0 .. f{n-1}` in a line, all joined by `trigger`.
    pub fn linear(name: &str, n: usize, runtime_ms: f64, trigger: &str) -> Self {
        let nodes: Vec<ChainNode> = (0..n)
            .map(|i| ChainNode {
                name: format!("f{i}"),
                median_runtime: SimDuration::from_millis(runtime_ms),
            })
            .collect();
        let edges = nodes
            .windows(2)
            .map(|w| ChainEdge {
                from: w[0].name.clone(),
                to: w[1].name.clone(),
                trigger: trigger.to_owned(),
            })
            .collect();
        Self {
            name: name.to_owned(),
            entry: "f0".to_owned(),
            nodes,
            edges,
        }
    }

    pub fn node(&self, name: &str) -> Option<&ChainNode> {
        self.nodes.iter().find(|n| n.name == name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.node(name).is_some()
    }

    pub fn successors<'a>(&'a self, name: &'a str) -> impl Iterator<Item = &'a ChainEdge> + 'a {
        self.edges.iter().filter(move |e| e.from == name)
    }

    pub fn is_terminal(&self, name: &str) -> bool {
        self.successors(name).next().is_none()
    }

    pub fn validate(&self) -> Result<(), ChainError> {
        let mut seen = BTreeSet::new();
        for n in &self.nodes {
            if !seen.insert(n.name.as_str()) {
                return Err(ChainError::DuplicateNode {
                    chain: self.name.clone(),
                    node: n.name.clone(),
                });
            }
        }
        if !seen.contains(self.entry.as_str()) {
            return Err(ChainError::MissingEntry {
                chain: self.name.clone(),
                entry: self.entry.clone(),
            });
        }
        for e in &self.edges {
            for node in [&e.from, &e.to] {
                if !seen.contains(node.as_str()) {
                    return Err(ChainError::DanglingEdge {
                        chain: self.name.clone(),
                        from: e.from.clone(),
                        to: e.to.clone(),
                        node: node.clone(),
                    });
                }
            }
        }
        if let Some(cycle) = self.find_cycle() {
            return Err(ChainError::Cycle {
                chain: self.name.clone(),
                cycle,
            });
        }
        if let Some(e) = self.edges.iter().find(|e| e.to == self.entry) {
            return Err(ChainError::EntryHasIncoming {
                chain: self.name.clone(),
                entry: self.entry.clone(),
                from: e.from.clone(),
            });
        }
        Ok(())
    }

    /// A cycle as a closed node path (first node repeated at the end).
    pub fn find_cycle(&self) -> Option<Vec<String>> {
        #[derive(Clone, Copy, PartialEq)]
        enum Mark {
            New,
            Active,
            Done,
        }
        fn visit<'a>(
            chain: &'a ChainSpec,
            node: &'a str,
            marks: &mut BTreeMap<&'a str, Mark>,
            stack: &mut Vec<&'a str>,
        ) -> Option<Vec<String>> {
            marks.insert(node, Mark::Active);
            stack.push(node);
            for e in chain.successors(node) {
                match marks.get(e.to.as_str()).copied().unwrap_or(Mark::New) {
                    Mark::Active => {
                        let start = stack.iter().position(|n| *n == e.to).unwrap_or(0);
                        let mut cycle: Vec<String> = stack[start..].iter().map(|s| s.to_string()).collect();
                        cycle.push(e.to.clone());
                        return Some(cycle);
                    }
                    Mark::New => {
                        if let Some(c) = visit(chain, &e.to, marks, stack) {
                            return Some(c);
                        }
                    }
                    Mark::Done => {}
                }
            }
            stack.pop();
            marks.insert(node, Mark::Done);
            None
        }
        let mut marks = BTreeMap::new();
        for n in &self.nodes {
            if marks.get(n.name.as_str()).copied().unwrap_or(Mark::New) == Mark::New {
                if let Some(c) = visit(self, &n.name, &mut marks, &mut Vec::new()) {
                    return Some(c);
                }
            }
        }
        None
    }

    /// Edges along the first path from `from` to `to`.
    pub fn path<'a>(&'a self, from: &str, to: &str) -> Option<Vec<&'a ChainEdge>> {
        if from == to {
            return Some(Vec::new());
        }
        for e in self.edges.iter().filter(|e| e.from == from) {
            if let Some(mut rest) = self.path(&e.to, to) {
                rest.insert(0, e);
                return Some(rest);
            }
        }
        None
    }
}

/// Where a prediction window is measured from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum WindowStart {
    /// The chain's first trigger fires; the entry function has yet to run.
    ChainStart,
    /// The named function has just completed (or fired its trigger).
    After(String),
}

/// Lead time before `target` starts: trigger delays along the path plus the
/// median runtimes of the functions that still have to run in between.
pub fn predict_window(chain: &ChainSpec, from: &WindowStart, target: &str, model: &TriggerModel) -> Result<SimDuration, PredictError> {
    let unknown = |node: &str| PredictError::UnknownNode {
        chain: chain.name.clone(),
        node: node.to_owned(),
    };
    chain.node(target).ok_or_else(|| unknown(target))?;
    let origin = match from {
        WindowStart::ChainStart => chain.entry.as_str(),
        WindowStart::After(n) => n.as_str(),
    };
    chain.node(origin).ok_or_else(|| unknown(origin))?;
    let path = chain.path(origin, target).ok_or_else(|| PredictError::Unreachable {
        chain: chain.name.clone(),
        from: origin.to_owned(),
        to: target.to_owned(),
    })?;
    let mut window = SimDuration::ZERO;
    if *from == WindowStart::ChainStart && origin != target {
        window += chain.node(origin).map(|n| n.median_runtime).unwrap_or_default();
    }
    for (i, edge) in path.iter().enumerate() {
        window += model.delay(&edge.trigger)?;
        if i + 1 < path.len() {
            window += chain.node(&edge.to).map(|n| n.median_runtime).unwrap_or_default();
        }
    }
    Ok(window)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ServiceClass {
    /// Freshen regardless of confidence.
    LatencySensitive,
    #[default]
    LatencyInsensitive,
}

impl std::str::FromStr for ServiceClass {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "latency-sensitive" => Ok(ServiceClass::LatencySensitive),
            "latency-insensitive" => Ok(ServiceClass::LatencyInsensitive),
            other => Err(format!(
                "unknown service class `{other}` (expected latency-sensitive or latency-insensitive)"
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SettleOutcome {
    InvokedInTime,
    Mispredicted,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LedgerConfig {
    pub window: usize,
    pub threshold: f64,
}

impl Default for LedgerConfig {
    fn default() -> Self {
        Self {
            window: 20,
            threshold: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct FunctionAccount {
    pub class: ServiceClass,
    pub freshens_issued: u64,
    /// Predictions made while suppressed, so no freshen was issued.
    pub suppressed_predictions: u64,
    pub hits: u64,
    pub mispredictions: u64,
    pub suppressed: bool,
    recent: VecDeque<bool>,
}

impl FunctionAccount {
    /// Hit ratio over the sliding window; 1.0 before any outcome.
    pub fn confidence(&self) -> f64 {
        if self.recent.is_empty() {
            return 1.0;
        }
        self.recent.iter().filter(|h| **h).count() as f64 / self.recent.len() as f64
    }
}

/// Per-function prediction accounting.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AccountingLedger {
    config: LedgerConfig,
    accounts: BTreeMap<String, FunctionAccount>,
}

impl AccountingLedger {
    pub fn new(config: LedgerConfig) -> Self {
        Self {
            config,
            accounts: BTreeMap::new(),
        }
    }

    pub fn config(&self) -> &LedgerConfig {
        &self.config
    }

    fn account(&mut self, function: &str) -> &mut FunctionAccount {
        self.accounts.entry(function.to_owned()).or_default()
    }

    pub fn set_class(&mut self, function: &str, class: ServiceClass) {
        self.account(function).class = class;
    }

    pub fn get(&self, function: &str) -> Option<&FunctionAccount> {
        self.accounts.get(function)
    }

    pub fn confidence(&self, function: &str) -> f64 {
        self.accounts.get(function).map_or(1.0, FunctionAccount::confidence)
    }

    pub fn is_suppressed(&self, function: &str) -> bool {
        self.accounts.get(function).is_some_and(|a| a.suppressed)
    }

    /// Whether a prediction for `function` should turn into a freshen.
    pub fn should_freshen(&self, function: &str) -> bool {
        match self.accounts.get(function) {
            None => true,
            Some(a) => a.class == ServiceClass::LatencySensitive || !a.suppressed,
        }
    }

    pub fn record_issue(&mut self, function: &str) {
        self.account(function).freshens_issued += 1;
    }

    pub fn record_suppressed(&mut self, function: &str) {
        self.account(function).suppressed_predictions += 1;
    }

    /// Adds an outcome to the window and re-evaluates suppression.
    pub fn settle(&mut self, function: &str, outcome: SettleOutcome) {
        let (window, threshold) = (self.config.window.max(1), self.config.threshold);
        let a = self.account(function);
        let hit = outcome == SettleOutcome::InvokedInTime;
        if hit {
            a.hits += 1;
        } else {
            a.mispredictions += 1;
        }
        a.recent.push_back(hit);
        while a.recent.len() > window {
            a.recent.pop_front();
        }
        let was = a.suppressed;
        a.suppressed = a.confidence() < threshold;
        if was != a.suppressed {
            tracing::info!(function, suppressed = a.suppressed, confidence = a.confidence(), "suppression changed");
        }
    }

    pub fn accounts(&self) -> impl Iterator<Item = (&str, &FunctionAccount)> {
        self.accounts.iter().map(|(k, v)| (k.as_str(), v))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ChainEvent {
    InvocationStarted(String),
    InvocationFinished(String),
    TriggerFired { from: String, to: String },
}

/// Instruction to run freshen for `target`, expected to start by `deadline`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FreshenDirective {
    pub chain: String,
    pub target: String,
    pub issue_at: SimTime,
    pub deadline: SimTime,
}

impl FreshenDirective {
    pub fn window(&self) -> SimDuration {
        self.deadline.since(self.issue_at)
    }
}

impl fmt::Display for FreshenDirective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "freshen {} at {} (deadline {})", self.target, self.issue_at, self.deadline)
    }
}

/// An expected invocation, whether or not a freshen was issued for it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Prediction {
    pub directive: FreshenDirective,
    pub issued: bool,
}

#[derive(Debug, Clone)]
pub struct Predictor {
    pub chains: Vec<ChainSpec>,
    pub model: TriggerModel,
    pub ledger: AccountingLedger,
    /// How many hops ahead to predict.
    pub depth: usize,
}

impl Predictor {
    pub fn new(chains: Vec<ChainSpec>, model: TriggerModel, ledger: AccountingLedger) -> Self {
        Self {
            chains,
            model,
            ledger,
            depth: 1,
        }
    }

    /// All expected invocations following `event`, issued or suppressed.
    /// Issued ones are counted in the ledger.
    pub fn predict(&mut self, event: &ChainEvent, now: SimTime) -> Result<Vec<Prediction>, PredictError> {
        let mut found = Vec::new();
        for chain in &self.chains {
            match event {
                ChainEvent::InvocationStarted(node) | ChainEvent::InvocationFinished(node) => {
                    if !chain.contains(node) {
                        continue;
                    }
                    let mut frontier = vec![node.clone()];
                    let mut seen = BTreeSet::new();
                    for _ in 0..self.depth.max(1) {
                        let mut next = Vec::new();
                        for n in &frontier {
                            for e in chain.successors(n) {
                                if seen.insert(e.to.clone()) {
                                    let window = predict_window(chain, &WindowStart::After(node.clone()), &e.to, &self.model)?;
                                    found.push((chain.name.clone(), e.to.clone(), window));
                                    next.push(e.to.clone());
                                }
                            }
                        }
                        frontier = next;
                    }
                }
                ChainEvent::TriggerFired { from, to } => {
                    if let Some(e) = chain.edges.iter().find(|e| &e.from == from && &e.to == to) {
                        found.push((chain.name.clone(), to.clone(), self.model.delay(&e.trigger)?));
                    }
                }
            }
        }
        let mut out = Vec::new();
        for (chain, target, window) in found {
            let issued = self.ledger.should_freshen(&target);
            if issued {
                self.ledger.record_issue(&target);
            } else {
                self.ledger.record_suppressed(&target);
            }
            out.push(Prediction {
                directive: FreshenDirective {
                    chain,
                    target,
                    issue_at: now,
                    deadline: now + window,
                },
                issued,
            });
        }
        Ok(out)
    }

    /// Directives to act on for `event`; suppressed predictions are dropped.
    pub fn on_event(&mut self, event: &ChainEvent, now: SimTime) -> Result<Vec<FreshenDirective>, PredictError> {
        Ok(self
            .predict(event, now)?
            .into_iter()
            .filter(|p| p.issued)
            .map(|p| p.directive)
            .collect())
    }

    pub fn settle(&mut self, function: &str, outcome: SettleOutcome) {
        self.ledger.settle(function, outcome);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_node(trigger: &str) -> ChainSpec {
        ChainSpec {
            name: "c".into(),
            entry: "a".into(),
            nodes: vec![
                ChainNode {
                    name: "a".into(),
                    median_runtime: SimDuration::from_millis(100.0),
                },
                ChainNode {
                    name: "b".into(),
                    median_runtime: SimDuration::from_millis(100.0),
                },
            ],
            edges: vec![ChainEdge {
                from: "a".into(),
                to: "b".into(),
                trigger: trigger.into(),
            }],
        }
    }

    #[test]
    fn one_hop_windows_are_the_trigger_delays() {
        let m = TriggerModel::default();
        for (t, ms) in [("s3", 1282.0), ("direct", 60.0), ("sns", 253.0), ("step-functions", 64.0)] {
            let w = predict_window(&two_node(t), &WindowStart::After("a".into()), "b", &m).unwrap();
            assert_eq!(w, SimDuration::from_millis(ms));
        }
    }

    #[test]
    fn unknown_trigger_is_a_configuration_error() {
        let err = predict_window(&two_node("carrier-pigeon"), &WindowStart::After("a".into()), "b", &TriggerModel::default());
        assert_eq!(err, Err(PredictError::UnknownTrigger("carrier-pigeon".into())));
    }

    #[test]
    fn long_chain_window_from_chain_start() {
        let chain = ChainSpec::linear("long", 8, 700.0, "step-functions");
        let w = predict_window(&chain, &WindowStart::ChainStart, "f7", &TriggerModel::default()).unwrap();
        // 7 runtimes before the last function plus 7 trigger delays
        assert_eq!(w, SimDuration::from_millis(7.0 * 700.0 + 7.0 * 64.0));
    }

    #[test]
    fn cycle_is_named() {
        let mut chain = ChainSpec::linear("loop", 3, 1.0, "direct");
        chain.edges.push(ChainEdge {
            from: "f2".into(),
            to: "f1".into(),
            trigger: "direct".into(),
        });
        match chain.validate() {
            Err(ChainError::Cycle { cycle, .. }) => assert_eq!(cycle, vec!["f1", "f2", "f1"]),
            other => panic!("expected cycle, got {other:?}"),
        }
    }

    #[test]
    fn entry_with_incoming_edge_is_rejected() {
        let mut chain = two_node("direct");
        chain.entry = "b".into();
        assert!(matches!(chain.validate(), Err(ChainError::EntryHasIncoming { .. })));
    }

    #[test]
    fn started_event_emits_directive_with_trigger_deadline() {
        let mut p = Predictor::new(vec![two_node("sns")], TriggerModel::default(), AccountingLedger::default());
        let now = SimTime::from_millis(1000.0);
        let d = p.on_event(&ChainEvent::InvocationStarted("a".into()), now).unwrap();
        assert_eq!(d.len(), 1);
        assert_eq!(d[0].target, "b");
        assert_eq!(d[0].deadline, now + SimDuration::from_millis(253.0));
        assert!(p.on_event(&ChainEvent::InvocationFinished("b".into()), now).unwrap().is_empty());
    }

    #[test]
    fn fan_out_predicts_every_successor() {
        let mut chain = two_node("direct");
        chain.nodes.push(ChainNode {
            name: "c".into(),
            median_runtime: SimDuration::ZERO,
        });
        chain.edges.push(ChainEdge {
            from: "a".into(),
            to: "c".into(),
            trigger: "s3".into(),
        });
        let mut p = Predictor::new(vec![chain], TriggerModel::default(), AccountingLedger::default());
        let d = p.on_event(&ChainEvent::InvocationFinished("a".into()), SimTime::ZERO).unwrap();
        let targets: Vec<_> = d.iter().map(|d| d.target.as_str()).collect();
        assert_eq!(targets, vec!["b", "c"]);
    }

    #[test]
    fn low_confidence_insensitive_function_is_suppressed() {
        let mut ledger = AccountingLedger::default();
        for _ in 0..2 {
            ledger.settle("b", SettleOutcome::InvokedInTime);
        }
        for _ in 0..8 {
            ledger.settle("b", SettleOutcome::Mispredicted);
        }
        assert!((ledger.confidence("b") - 0.2).abs() < 1e-12);
        assert!(ledger.is_suppressed("b"));
        let mut p = Predictor::new(vec![two_node("sns")], TriggerModel::default(), ledger.clone());
        assert!(p.on_event(&ChainEvent::InvocationStarted("a".into()), SimTime::ZERO).unwrap().is_empty());
        ledger.set_class("b", ServiceClass::LatencySensitive);
        let mut p = Predictor::new(vec![two_node("sns")], TriggerModel::default(), ledger);
        assert_eq!(p.on_event(&ChainEvent::InvocationStarted("a".into()), SimTime::ZERO).unwrap().len(), 1);
    }

    #[test]
    fn all_hits_keep_confidence_at_one() {
        let mut ledger = AccountingLedger::default();
        for _ in 0..10 {
            ledger.settle("f", SettleOutcome::InvokedInTime);
        }
        assert_eq!(ledger.confidence("f"), 1.0);
        assert!(!ledger.is_suppressed("f"));
    }

    #[test]
    fn jitter_sampling_stays_within_bounds() {
        use rand::SeedableRng;
        let mut m = TriggerModel::empty();
        m.insert("x", 100.0, 10.0).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            let d = m.sample("x", &mut rng).unwrap().as_millis_f64();
            assert!((90.0..=110.0).contains(&d));
        }
        assert!(m.insert("zero", 0.0, 0.0).is_err());
    }
}
