//! Containers and language runtimes: init/run hooks, runtime-scoped state and
//! the per-invocation record.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use thiserror::Error;

use crate::cache::FreshenCache;
use crate::freshen::{entry_specs, infer_plan, Branch, ConsumePolicy, EntryKind, FrState, FreshenMode, FreshenPlan};
use crate::function::{object_id, FunctionDef, FunctionError, Operand};
use crate::netsim::{NetError, NetSim, SimConnection, WarmPolicy};
use crate::sim::{run_episode, Episode};
use crate::time::{SimDuration, SimTime};
use crate::value::{EndpointId, Value};

#[derive(Debug, Clone, PartialEq)]
pub struct RuntimeConfig {
    pub mode: FreshenMode,
    /// TTL for entries with no step- or function-level TTL.
    pub default_ttl: SimDuration,
    pub consume: ConsumePolicy,
    pub warm_policy: WarmPolicy,
    /// How long a wrapper waits on a running entry before taking it over.
    /// `None` means twice the modeled worst-case time of the entry's action.
    pub wait_timeout: Option<SimDuration>,
    pub cold_start_delay: SimDuration,
}

impl Default for RuntimeConfig {
    fn default() -> Self {
        Self {
            mode: FreshenMode::Full,
            default_ttl: SimDuration::ZERO,
            consume: ConsumePolicy::PersistUntilTtl,
            warm_policy: WarmPolicy::default(),
            wait_timeout: None,
            cold_start_delay: SimDuration::ZERO,
        }
    }
}

/// How freshen related to an invocation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FreshenTiming {
    Disabled,
    /// Freshen was issued before the invocation started.
    Predicted,
    /// Freshen was issued at or after the invocation started.
    Unanticipated,
}

impl FreshenTiming {
    pub fn as_str(self) -> &'static str {
        match self {
            FreshenTiming::Disabled => "disabled",
            FreshenTiming::Predicted => "predicted",
            FreshenTiming::Unanticipated => "unanticipated",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InvocationRecord {
    pub function: String,
    pub container_id: String,
    pub args: Value,
    pub t_trigger: SimTime,
    pub t_start: SimTime,
    pub t_end: SimTime,
    pub step_durations: Vec<SimDuration>,
    /// Wrapper branch taken per step; `None` for unwrapped steps.
    pub branches: Vec<Option<Branch>>,
    pub cold_start: bool,
    pub freshen_mode: FreshenTiming,
}

impl InvocationRecord {
    pub fn duration(&self) -> SimDuration {
        self.t_end.since(self.t_start)
    }

    /// Trigger to completion.
    pub fn latency(&self) -> SimDuration {
        self.t_end.since(self.t_trigger)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("step {step} failed: {error}")]
pub struct InvocationError {
    pub step: usize,
    pub error: NetError,
}

/// A warm container running one function.
pub struct RuntimeContext {
    pub container_id: String,
    pub(crate) function: Arc<FunctionDef>,
    pub(crate) plan: FreshenPlan,
    pub(crate) vars: BTreeMap<String, Value>,
    pub(crate) fr_state: Arc<FrState>,
    pub(crate) cache: Arc<FreshenCache>,
    pub(crate) connections: BTreeMap<EndpointId, SimConnection>,
    /// fr_state entry serving each step.
    pub(crate) step_entries: Vec<Option<usize>>,
    pub(crate) config: RuntimeConfig,
    pub(crate) ready_at: SimTime,
    pub(crate) invocations: u64,
    warm: bool,
}

impl fmt::Debug for RuntimeContext {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("RuntimeContext")
            .field("container_id", &self.container_id)
            .field("function", &self.function.name)
            .field("vars", &self.vars)
            .field("fr_state", &self.fr_state.len())
            .field("connections", &self.connections.keys().collect::<Vec<_>>())
            .field("warm", &self.warm)
            .finish()
    }
}

impl RuntimeContext {
    /// The init hook: validates the function and allocates one idle fr_state
    /// entry per freshenable step.
    pub fn init(function: impl Into<Arc<FunctionDef>>, config: RuntimeConfig, now: SimTime) -> Result<Self, FunctionError> {
        let function = function.into();
        function.validate()?;
        let plan = infer_plan(&function);
        let cache = Arc::new(FreshenCache::new());
        let fr_state = Arc::new(FrState::new(
            entry_specs(&function, &plan, config.default_ttl),
            Arc::clone(&cache),
            config.consume,
        ));
        let mut step_entries = vec![None; function.steps.len()];
        for a in &plan.actions {
            step_entries[a.step] = Some(a.entry);
        }
        Ok(Self {
            container_id: format!("{}-0", function.name),
            ready_at: now + config.cold_start_delay,
            function,
            plan,
            vars: BTreeMap::new(),
            fr_state,
            cache,
            connections: BTreeMap::new(),
            step_entries,
            config,
            invocations: 0,
            warm: true,
        })
    }

    pub fn with_container_id(mut self, id: impl Into<String>) -> Self {
        self.container_id = id.into();
        self
    }

    /// The run hook with no concurrent freshen.
    pub fn run(&mut self, net: &mut NetSim, args: Value, now: SimTime) -> (Result<Value, InvocationError>, InvocationRecord) {
        let out = run_episode(self, net, Episode::invocation(args, now));
        let record = out.record.expect("an invocation was scheduled");
        (out.result.expect("an invocation was scheduled"), record)
    }

    /// Replaces the container: all runtime-scoped state, fr_state and
    /// connections are dropped, and the next invocation is a cold start.
    pub fn recycle(&mut self, now: SimTime) {
        self.cache = Arc::new(FreshenCache::new());
        self.fr_state = Arc::new(FrState::new(
            entry_specs(&self.function, &self.plan, self.config.default_ttl),
            Arc::clone(&self.cache),
            self.config.consume,
        ));
        self.vars.clear();
        self.connections.clear();
        self.invocations = 0;
        self.ready_at = now + self.config.cold_start_delay;
    }

    pub fn function(&self) -> &Arc<FunctionDef> {
        &self.function
    }

    /// The full inferred plan, regardless of mode.
    pub fn plan(&self) -> &FreshenPlan {
        &self.plan
    }

    pub fn fr_state(&self) -> &Arc<FrState> {
        &self.fr_state
    }

    pub fn cache(&self) -> &Arc<FreshenCache> {
        &self.cache
    }

    pub fn config(&self) -> &RuntimeConfig {
        &self.config
    }

    pub fn vars(&self) -> &BTreeMap<String, Value> {
        &self.vars
    }

    pub fn connections(&self) -> &BTreeMap<EndpointId, SimConnection> {
        &self.connections
    }

    pub fn connections_mut(&mut self) -> &mut BTreeMap<EndpointId, SimConnection> {
        &mut self.connections
    }

    pub fn is_warm(&self) -> bool {
        self.warm
    }

    pub fn invocations(&self) -> u64 {
        self.invocations
    }

    /// The entry wrapping `step` under `mode`, if any.
    pub fn wrapped_entry(&self, step: usize, mode: FreshenMode) -> Option<usize> {
        let entry = self.step_entries.get(step).copied().flatten()?;
        let allowed = match self.fr_state.spec(entry).kind {
            EntryKind::Fetch(_) => mode.prefetch(),
            EntryKind::Warm(_) => mode.warm(),
        };
        allowed.then_some(entry)
    }

    /// Wrapper wait timeout for `entry`.
    pub fn wait_timeout(&self, net: &NetSim, entry: usize) -> SimDuration {
        if let Some(t) = self.config.wait_timeout {
            return t;
        }
        let spec = self.fr_state.spec(entry);
        let Ok(ep) = net.endpoint(spec.kind.endpoint()) else {
            return SimDuration::from_millis(1000.0);
        };
        // probe or connect, optional TLS round trip, packet pair
        let setup = ep.rtt * if ep.tls { 4 } else { 3 };
        let action = match &spec.kind {
            EntryKind::Fetch(key) => net
                .cold_transfer_time(&key.endpoint, ep.object_size(&key.object))
                .unwrap_or_default(),
            EntryKind::Warm(_) => SimDuration::ZERO,
        };
        (setup + action) * 2
    }

    /// Value of `op` for the current invocation.
    pub(crate) fn resolve(&self, op: &Operand, args: &Value, outputs: &[Value]) -> Value {
        match op {
            Operand::Const(name) => self.function.constant(name).cloned().unwrap_or_default(),
            Operand::Args => args.clone(),
            Operand::Step(i) => outputs.get(*i).cloned().unwrap_or_default(),
            Operand::Runtime(name) => self.vars.get(name).cloned().unwrap_or_default(),
        }
    }

    pub(crate) fn resolve_object(&self, op: &Operand, args: &Value, outputs: &[Value]) -> String {
        object_id(&self.resolve(op, args, outputs))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::function::sample_lambda;
    use crate::netsim::{Location, NetConfig, SimEndpoint};

    fn net() -> NetSim {
        let ep = SimEndpoint::new("store", 10.0, 10_000.0, Location::Edge)
            .unwrap()
            .with_default_object_size(50_000);
        NetSim::new(NetConfig::default(), [ep], 1)
    }

    #[test]
    fn init_allocates_one_entry_per_freshenable_step() {
        let ctx = RuntimeContext::init(sample_lambda("store", 5.0, 100), RuntimeConfig::default(), SimTime::ZERO).unwrap();
        let snap = ctx.fr_state().snapshot();
        assert_eq!(snap.len(), 2);
        assert_eq!((snap[0].step, snap[1].step), (0, 2));
        assert!(snap[0].kind.is_fetch());
        assert!(ctx.vars().is_empty());
    }

    #[test]
    fn compute_only_function_has_empty_fr_state() {
        let f = FunctionDef::builder("c").compute(1.0).build().unwrap();
        let ctx = RuntimeContext::init(f, RuntimeConfig::default(), SimTime::ZERO).unwrap();
        assert!(ctx.fr_state().is_empty());
    }

    #[test]
    fn init_rejects_undeclared_constant() {
        let f = FunctionDef::builder("bad")
            .data_get("store", None, Operand::constant("NOPE"))
            .build_unchecked();
        let err = RuntimeContext::init(f, RuntimeConfig::default(), SimTime::ZERO).unwrap_err();
        assert_eq!(err.step(), Some(0));
    }

    #[test]
    fn identical_functions_give_identical_shapes() {
        let a = RuntimeContext::init(sample_lambda("store", 5.0, 100), RuntimeConfig::default(), SimTime::ZERO).unwrap();
        let b = RuntimeContext::init(sample_lambda("store", 5.0, 100), RuntimeConfig::default(), SimTime::ZERO).unwrap();
        assert_eq!(a.fr_state().snapshot(), b.fr_state().snapshot());
    }

    #[test]
    fn runtime_vars_carry_over_between_invocations() {
        let f = FunctionDef::builder("counter")
            .compute_over(1.0, vec![Operand::Runtime("seen".into()), Operand::Args])
            .with_last(|s| s.store_as = Some("seen".into()))
            .build()
            .unwrap();
        let mut ctx = RuntimeContext::init(f, RuntimeConfig::default(), SimTime::ZERO).unwrap();
        let mut n = net();
        let (first, _) = ctx.run(&mut n, Value::Int(1), SimTime::ZERO);
        let first = first.unwrap();
        assert_eq!(ctx.vars().get("seen"), Some(&first));
        let (second, rec) = ctx.run(&mut n, Value::Int(1), SimTime::from_millis(10.0));
        assert_ne!(second.unwrap(), first);
        assert!(!rec.cold_start);
    }

    #[test]
    fn recycle_resets_to_cold() {
        let mut ctx = RuntimeContext::init(sample_lambda("store", 5.0, 100), RuntimeConfig::default(), SimTime::ZERO).unwrap();
        let mut n = net();
        let _ = ctx.run(&mut n, Value::Int(1), SimTime::ZERO);
        ctx.recycle(SimTime::from_millis(100.0));
        assert!(ctx.vars().is_empty());
        assert!(ctx.connections().is_empty());
        let (_, rec) = ctx.run(&mut n, Value::Int(1), SimTime::from_millis(200.0));
        assert!(rec.cold_start);
    }

    #[test]
    fn record_times_are_ordered() {
        let mut ctx = RuntimeContext::init(sample_lambda("store", 5.0, 100), RuntimeConfig::default(), SimTime::ZERO).unwrap();
        let (_, rec) = ctx.run(&mut net(), Value::Int(1), SimTime::from_millis(3.0));
        assert!(rec.t_trigger <= rec.t_start && rec.t_start <= rec.t_end);
        assert!(rec.step_durations.iter().copied().sum::<SimDuration>() <= rec.duration());
        assert_eq!(rec.step_durations.len(), 3);
    }
}
