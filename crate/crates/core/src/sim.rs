//! Discrete-event driver for one invocation racing one freshen executor.
//!
//! Both actors are explicit state machines over simulated time. The driver
//! repeatedly advances whichever actor is due next; ties at the same instant
//! are broken by [`TieBreak`], which is how the interleaving explorer covers
//! both orders of a same-tick claim. Network operations are computed
//! eagerly against [`NetSim`] when an action starts and the actor stays busy
//! until the modeled completion time, so fr_state entries remain `running`
//! for exactly the modeled duration.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::freshen::{
    ActionOutcome, ActionRecord, Access, Branch, ClaimToken, EntryKind, EntryState, FailureReason, FreshenMode,
    FreshenPlan, FreshenReport, PlanAction,
};
use crate::function::StepKind;
use crate::netsim::{EntryTag, NetError, NetSim, Origin, RequestTag};
use crate::runtime::{FreshenTiming, InvocationError, InvocationRecord, RuntimeContext};
use crate::time::{SimDuration, SimTime};
use crate::value::{combine, ObjectKey, Value};

/// Upper bound on driver iterations; reaching it means an actor stopped
/// making progress.
const MAX_EVENTS: usize = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TieBreak {
    #[default]
    InvocationFirst,
    FreshenFirst,
    /// Coin flip per tie from the given seed.
    Seeded(u64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct FreshenLaunch {
    pub plan: FreshenPlan,
    pub issue_at: SimTime,
    /// Expected invocation start. Warm actions are deferred to finish just
    /// before it, so the warmed window is not lost to idle decay.
    pub deadline: Option<SimTime>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    /// Arguments and arrival time of the invocation, if one happens.
    pub invocation: Option<(Value, SimTime)>,
    /// When the upstream trigger fired; defaults to the arrival time.
    pub trigger_at: Option<SimTime>,
    pub freshen: Option<FreshenLaunch>,
    /// Overrides the context's configured mode.
    pub mode: Option<FreshenMode>,
    pub tie_break: TieBreak,
    /// Extra time the freshen executor hangs on an entry's action.
    pub stalls: Vec<(usize, SimDuration)>,
}

impl Episode {
    pub fn invocation(args: Value, at: SimTime) -> Self {
        Self {
            invocation: Some((args, at)),
            trigger_at: None,
            freshen: None,
            mode: None,
            tie_break: TieBreak::default(),
            stalls: Vec::new(),
        }
    }

    /// A freshen with no invocation (a misprediction).
    pub fn freshen_only(launch: FreshenLaunch) -> Self {
        Self {
            invocation: None,
            trigger_at: None,
            freshen: Some(launch),
            mode: None,
            tie_break: TieBreak::default(),
            stalls: Vec::new(),
        }
    }

    pub fn with_freshen(mut self, plan: FreshenPlan, issue_at: SimTime) -> Self {
        self.freshen = Some(FreshenLaunch {
            plan,
            issue_at,
            deadline: None,
        });
        self
    }

    pub fn with_launch(mut self, launch: FreshenLaunch) -> Self {
        self.freshen = Some(launch);
        self
    }

    pub fn with_trigger(mut self, at: SimTime) -> Self {
        self.trigger_at = Some(at);
        self
    }

    pub fn with_mode(mut self, mode: FreshenMode) -> Self {
        self.mode = Some(mode);
        self
    }

    pub fn with_tie_break(mut self, tie: TieBreak) -> Self {
        self.tie_break = tie;
        self
    }

    pub fn with_stall(mut self, entry: usize, extra: SimDuration) -> Self {
        self.stalls.push((entry, extra));
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeOutcome {
    pub result: Option<Result<Value, InvocationError>>,
    pub record: Option<InvocationRecord>,
    pub report: Option<FreshenReport>,
    /// When the last actor finished.
    pub end: SimTime,
    pub events: usize,
    /// Object fetches that reached the datastore, from either actor.
    pub upstream_fetches: usize,
}

impl EpisodeOutcome {
    pub fn value(&self) -> Option<&Value> {
        self.result.as_ref()?.as_ref().ok()
    }
}

struct World<'a> {
    ctx: &'a mut RuntimeContext,
    net: &'a mut NetSim,
    mode: FreshenMode,
    fetches: usize,
}

// ---------------------------------------------------------------------------
// freshen executor

enum FreshenPhase {
    Next,
    Finish {
        token: ClaimToken,
        result: Result<Option<Value>, NetError>,
        started_at: SimTime,
    },
    Done,
}

struct FreshenActor {
    plan: FreshenPlan,
    pos: usize,
    wake: SimTime,
    deadline: Option<SimTime>,
    phase: FreshenPhase,
    stalls: Vec<(usize, SimDuration)>,
    report: FreshenReport,
}

impl FreshenActor {
    fn next_time(&self) -> Option<SimTime> {
        match self.phase {
            FreshenPhase::Done => None,
            _ => Some(self.wake),
        }
    }

    fn tag(&self, w: &World<'_>, token: ClaimToken) -> RequestTag {
        RequestTag::new(Origin::Freshen)
            .for_function(&w.ctx.function.name)
            .with_entry(EntryTag {
                index: token.index,
                epoch: token.epoch,
            })
    }

    fn stall(&self, entry: usize) -> SimDuration {
        self.stalls
            .iter()
            .filter(|(e, _)| *e == entry)
            .map(|(_, d)| *d)
            .sum()
    }

    fn advance(&mut self, w: &mut World<'_>, now: SimTime) {
        match std::mem::replace(&mut self.phase, FreshenPhase::Next) {
            FreshenPhase::Done => self.phase = FreshenPhase::Done,
            FreshenPhase::Finish {
                token,
                result,
                started_at,
            } => {
                let fr = &w.ctx.fr_state;
                let outcome = match result {
                    Ok(value) => match fr.complete(token, value, now) {
                        Ok(()) => ActionOutcome::Performed,
                        Err(_) => ActionOutcome::Failed(FailureReason::Superseded),
                    },
                    Err(e) => {
                        let superseded = fr.fail(token, now).is_err();
                        if superseded {
                            ActionOutcome::Failed(FailureReason::Superseded)
                        } else {
                            ActionOutcome::Failed(FailureReason::Network(e.to_string()))
                        }
                    }
                };
                self.record(token.index, outcome, started_at, now);
            }
            FreshenPhase::Next => self.start_next(w, now),
        }
    }

    fn record(&mut self, entry: usize, outcome: ActionOutcome, started_at: SimTime, now: SimTime) {
        let planned = &self.plan.actions[self.pos];
        debug_assert_eq!(planned.entry, entry);
        self.report.actions.push(ActionRecord {
            entry,
            step: planned.step,
            action: planned.action.clone(),
            outcome,
            started_at,
            finished_at: now,
        });
        self.pos += 1;
        self.phase = FreshenPhase::Next;
        self.wake = now;
    }

    fn start_next(&mut self, w: &mut World<'_>, now: SimTime) {
        if self.pos >= self.plan.actions.len() {
            self.phase = FreshenPhase::Done;
            return;
        }
        self.hoist_warm(w);
        let planned = self.plan.actions[self.pos].clone();
        let feeds_prefetch = matches!(&planned.action, PlanAction::WarmConnection { endpoint }
            if self.plan.actions[self.pos + 1..].iter().any(|a| a.action.is_prefetch() && a.action.endpoint() == endpoint));
        if let (PlanAction::WarmConnection { endpoint }, Some(deadline), false) = (&planned.action, self.deadline, feeds_prefetch) {
            // connect or probe, optional TLS, then one packet-pair round trip
            let lead = w
                .net
                .endpoint(endpoint)
                .map(|ep| ep.rtt * if ep.tls { 3 } else { 2 })
                .unwrap_or_default();
            let start = deadline.saturating_sub(lead);
            if now < start {
                self.wake = start;
                return;
            }
        }
        let Some(token) = w.ctx.fr_state.claim_for_freshen(planned.entry, now) else {
            self.record(planned.entry, ActionOutcome::Skipped, now, now);
            return;
        };
        let tag = self.tag(w, token);
        let kind = w.ctx.fr_state.spec(planned.entry).kind.clone();
        let (result, done) = match &kind {
            EntryKind::Fetch(key) => fetch(w, key, now, &tag).map_or_else(
                |(e, at)| (Err(e), at),
                |(v, at)| (Ok(Some(v)), at),
            ),
            EntryKind::Warm(endpoint) => {
                let policy = w.ctx.config.warm_policy.clone();
                match w.net.warm_endpoint(&mut w.ctx.connections, endpoint, &policy, now, &tag) {
                    Ok(at) => (Ok(None), at),
                    Err(e) => {
                        let at = e.at().unwrap_or(now);
                        (Err(e), at)
                    }
                }
            }
        };
        self.phase = FreshenPhase::Finish {
            token,
            result,
            started_at: now,
        };
        self.wake = done.max(now) + self.stall(planned.entry);
    }
}

impl FreshenActor {
    /// Moves a pending warm of the same endpoint in front of a prefetch
    /// that needs more than one initial window.
    fn hoist_warm(&mut self, w: &World<'_>) {
        let PlanAction::Prefetch { endpoint, object } = &self.plan.actions[self.pos].action else {
            return;
        };
        let Ok(ep) = w.net.endpoint(endpoint) else {
            return;
        };
        let initial = u64::from(w.net.config().initial_window) * u64::from(w.net.config().mss);
        if ep.object_size(object) <= initial {
            return;
        }
        let later = self.plan.actions[self.pos + 1..]
            .iter()
            .position(|a| matches!(&a.action, PlanAction::WarmConnection { endpoint: e } if e == endpoint));
        if let Some(i) = later {
            let warm = self.plan.actions.remove(self.pos + 1 + i);
            self.plan.actions.insert(self.pos, warm);
        }
    }
}

fn fetch(w: &mut World<'_>, key: &ObjectKey, now: SimTime, tag: &RequestTag) -> Result<(Value, SimTime), (NetError, SimTime)> {
    let blob = w.net.object(key).map_err(|e| (e, now))?;
    match w.net.request(&mut w.ctx.connections, &key.endpoint, blob.size, now, tag) {
        Ok(done) => {
            w.fetches += 1;
            Ok((Value::Blob(blob.into()), done))
        }
        Err(e) => {
            let at = e.at().unwrap_or(now);
            Err((e, at))
        }
    }
}

// ---------------------------------------------------------------------------
// invocation

enum After {
    Output(Value),
    CompleteFetch { token: ClaimToken, value: Value },
    Fail { token: Option<ClaimToken>, error: NetError },
    WarmDone { token: ClaimToken, ok: bool },
}

enum InvPhase {
    Waiting,
    Step,
    Busy { then: After },
    Blocked { entry: usize, epoch: u64, deadline: SimTime },
    Done,
}

struct InvocationActor {
    args: Value,
    wake: SimTime,
    phase: InvPhase,
    step: usize,
    step_start: Option<SimTime>,
    waited: bool,
    branch: Option<Branch>,
    outputs: Vec<Value>,
    record: InvocationRecord,
    result: Option<Result<Value, InvocationError>>,
}

impl InvocationActor {
    fn next_time(&self) -> Option<SimTime> {
        match self.phase {
            InvPhase::Done => None,
            _ => Some(self.wake),
        }
    }

    fn blocked_on(&self) -> Option<(usize, u64)> {
        match self.phase {
            InvPhase::Blocked { entry, epoch, .. } => Some((entry, epoch)),
            _ => None,
        }
    }

    fn tag(&self, w: &World<'_>, token: Option<ClaimToken>) -> RequestTag {
        let tag = RequestTag::new(Origin::Invocation).for_function(&w.ctx.function.name);
        match token {
            Some(t) => tag.with_entry(EntryTag {
                index: t.index,
                epoch: t.epoch,
            }),
            None => tag,
        }
    }

    fn busy(&mut self, until: SimTime, then: After) {
        self.wake = until;
        self.phase = InvPhase::Busy { then };
    }

    fn advance(&mut self, w: &mut World<'_>, now: SimTime) {
        match std::mem::replace(&mut self.phase, InvPhase::Step) {
            InvPhase::Waiting => {
                self.record.t_start = now;
                self.record.cold_start = w.ctx.invocations == 0;
                w.ctx.invocations += 1;
                self.wake = now;
            }
            InvPhase::Step => self.begin_step(w, now),
            InvPhase::Busy { then } => self.after(w, now, then),
            InvPhase::Blocked { entry, epoch, deadline } => {
                let still_running = w.ctx.fr_state.status(entry) == (EntryState::Running, epoch);
                self.waited = true;
                if !still_running {
                    self.begin_step(w, now);
                } else if now >= deadline {
                    match w.ctx.fr_state.take_over(entry, epoch, now) {
                        Some(token) => self.run_claimed(w, now, token),
                        None => self.begin_step(w, now),
                    }
                } else {
                    self.phase = InvPhase::Blocked { entry, epoch, deadline };
                    self.wake = deadline;
                }
            }
            InvPhase::Done => self.phase = InvPhase::Done,
        }
    }

    fn begin_step(&mut self, w: &mut World<'_>, now: SimTime) {
        let function = w.ctx.function.clone();
        let Some(step) = function.steps.get(self.step) else {
            self.finish(Ok(self.outputs.last().cloned().unwrap_or_default()), now);
            return;
        };
        self.step_start.get_or_insert(now);
        let entry = w.ctx.wrapped_entry(self.step, w.mode);
        match &step.kind {
            StepKind::Compute { duration, inputs } => {
                let values: Vec<Value> = match inputs {
                    Some(ops) => ops.iter().map(|op| w.ctx.resolve(op, &self.args, &self.outputs)).collect(),
                    None => self.outputs.iter().cloned().chain([self.args.clone()]).collect(),
                };
                let out = Value::Hash(combine("compute", &values));
                self.busy(now + *duration, After::Output(out));
            }
            StepKind::DataGet { endpoint, object, .. } => {
                if let Some(entry) = entry {
                    self.access(w, now, entry);
                } else {
                    let key = ObjectKey::new(endpoint.clone(), w.ctx.resolve_object(object, &self.args, &self.outputs));
                    let tag = self.tag(w, None);
                    match fetch(w, &key, now, &tag) {
                        Ok((v, at)) => self.busy(at, After::Output(v)),
                        Err((error, at)) => self.busy(at, After::Fail { token: None, error }),
                    }
                }
            }
            StepKind::DataPut { .. } => match entry {
                Some(entry) => self.access(w, now, entry),
                None => self.start_put(w, now),
            },
        }
    }

    /// The wrapper: hit, wait, or claim-and-execute.
    fn access(&mut self, w: &mut World<'_>, now: SimTime, entry: usize) {
        match w.ctx.fr_state.enter(entry, now) {
            Access::Hit(value) => {
                self.branch = Some(if self.waited {
                    Branch::RunningWait
                } else {
                    Branch::FinishedHit
                });
                match value {
                    Some(v) => {
                        w.ctx.fr_state.consume(entry, now);
                        self.finish_step(w, v, now);
                    }
                    None => self.start_put(w, now),
                }
            }
            Access::Pending { epoch } => {
                let deadline = now + w.ctx.wait_timeout(w.net, entry);
                self.phase = InvPhase::Blocked { entry, epoch, deadline };
                self.wake = deadline;
            }
            Access::Claimed(token) => self.run_claimed(w, now, token),
        }
    }

    fn run_claimed(&mut self, w: &mut World<'_>, now: SimTime, token: ClaimToken) {
        self.branch = Some(Branch::SelfExecuted { after_wait: self.waited });
        let tag = self.tag(w, Some(token));
        match w.ctx.fr_state.spec(token.index).kind.clone() {
            EntryKind::Fetch(key) => match fetch(w, &key, now, &tag) {
                Ok((value, at)) => self.busy(at, After::CompleteFetch { token, value }),
                Err((error, at)) => self.busy(
                    at,
                    After::Fail {
                        token: Some(token),
                        error,
                    },
                ),
            },
            EntryKind::Warm(endpoint) => {
                let policy = w.ctx.config.warm_policy.clone();
                match w.net.warm_endpoint(&mut w.ctx.connections, &endpoint, &policy, now, &tag) {
                    Ok(at) => self.busy(at, After::WarmDone { token, ok: true }),
                    Err(e) => self.busy(e.at().unwrap_or(now), After::WarmDone { token, ok: false }),
                }
            }
        }
    }

    fn start_put(&mut self, w: &mut World<'_>, now: SimTime) {
        let function = w.ctx.function.clone();
        let StepKind::DataPut {
            endpoint,
            object,
            payload,
            payload_bytes,
            ..
        } = &function.steps[self.step].kind
        else {
            unreachable!("start_put on a non-put step");
        };
        let key = ObjectKey::new(endpoint.clone(), w.ctx.resolve_object(object, &self.args, &self.outputs));
        let payload = w.ctx.resolve(payload, &self.args, &self.outputs);
        let tag = self.tag(w, None);
        match w.net.request(&mut w.ctx.connections, endpoint, *payload_bytes, now, &tag) {
            Ok(at) => {
                let ack = w.net.put_ack(&key, &payload);
                self.busy(at, After::Output(ack));
            }
            Err(error) => self.busy(error.at().unwrap_or(now), After::Fail { token: None, error }),
        }
    }

    fn after(&mut self, w: &mut World<'_>, now: SimTime, then: After) {
        match then {
            After::Output(v) => self.finish_step(w, v, now),
            After::CompleteFetch { token, value } => {
                let _ = w.ctx.fr_state.complete(token, Some(value.clone()), now);
                w.ctx.fr_state.consume(token.index, now);
                self.finish_step(w, value, now);
            }
            After::Fail { token, error } => {
                if let Some(token) = token {
                    let _ = w.ctx.fr_state.fail(token, now);
                }
                self.finish(Err(InvocationError { step: self.step, error }), now);
            }
            After::WarmDone { token, ok } => {
                if ok {
                    let _ = w.ctx.fr_state.complete(token, None, now);
                } else {
                    let _ = w.ctx.fr_state.fail(token, now);
                }
                self.start_put(w, now);
            }
        }
    }

    fn finish_step(&mut self, w: &mut World<'_>, value: Value, now: SimTime) {
        let start = self.step_start.take().unwrap_or(now);
        self.record.step_durations.push(now.since(start));
        self.record.branches.push(self.branch.take());
        if let Some(name) = &w.ctx.function.steps[self.step].store_as {
            w.ctx.vars.insert(name.clone(), value.clone());
        }
        self.outputs.push(value);
        self.step += 1;
        self.waited = false;
        self.phase = InvPhase::Step;
        self.wake = now;
    }

    fn finish(&mut self, result: Result<Value, InvocationError>, now: SimTime) {
        self.record.t_end = now;
        self.result = Some(result);
        self.phase = InvPhase::Done;
    }
}

// ---------------------------------------------------------------------------
// driver

/// Runs one episode to completion against `ctx` and `net`.
///
/// # Panics
///
/// If the actors stop making progress (more than a million events), which
/// would indicate a livelock in the coordination protocol.
pub fn run_episode(ctx: &mut RuntimeContext, net: &mut NetSim, episode: Episode) -> EpisodeOutcome {
    let mode = episode.mode.unwrap_or(ctx.config.mode);
    let mut tie_rng = match episode.tie_break {
        TieBreak::Seeded(seed) => Some(ChaCha8Rng::seed_from_u64(seed)),
        _ => None,
    };

    let mut freshen = episode
        .freshen
        .filter(|_| mode != FreshenMode::Disabled)
        .map(|launch| FreshenActor {
            report: FreshenReport::new(launch.plan.function.clone(), launch.issue_at),
            plan: launch.plan.for_mode(mode),
            pos: 0,
            wake: launch.issue_at,
            deadline: launch.deadline,
            phase: FreshenPhase::Next,
            stalls: episode.stalls.clone(),
        });

    let mut invocation = episode.invocation.map(|(args, at)| {
        let start = at.max(ctx.ready_at);
        let timing = match &freshen {
            None => FreshenTiming::Disabled,
            Some(f) if f.report.issued_at < start => FreshenTiming::Predicted,
            Some(_) => FreshenTiming::Unanticipated,
        };
        InvocationActor {
            record: InvocationRecord {
                function: ctx.function.name.clone(),
                container_id: ctx.container_id.clone(),
                args: args.clone(),
                t_trigger: episode.trigger_at.unwrap_or(at).min(start),
                t_start: start,
                t_end: start,
                step_durations: Vec::new(),
                branches: Vec::new(),
                cold_start: false,
                freshen_mode: timing,
            },
            args,
            wake: start,
            phase: InvPhase::Waiting,
            step: 0,
            step_start: None,
            waited: false,
            branch: None,
            outputs: Vec::new(),
            result: None,
        }
    });

    let mut world = World {
        ctx,
        net,
        mode,
        fetches: 0,
    };
    let mut events = 0;
    let mut end = SimTime::ZERO;
    loop {
        let f_next = freshen.as_ref().and_then(FreshenActor::next_time);
        let i_next = invocation.as_ref().and_then(InvocationActor::next_time);
        let run_freshen = match (f_next, i_next) {
            (None, None) => break,
            (Some(_), None) => true,
            (None, Some(_)) => false,
            (Some(f), Some(i)) if f != i => f < i,
            (Some(_), Some(_)) => match (&episode.tie_break, tie_rng.as_mut()) {
                (TieBreak::FreshenFirst, _) => true,
                (_, Some(rng)) => rng.random_bool(0.5),
                _ => false,
            },
        };
        events += 1;
        assert!(events < MAX_EVENTS, "episode made no progress after {MAX_EVENTS} events");
        if run_freshen {
            let f = freshen.as_mut().expect("freshen actor scheduled");
            let now = f.wake;
            end = end.max(now);
            f.advance(&mut world, now);
            if let Some(inv) = invocation.as_mut() {
                if let Some((entry, epoch)) = inv.blocked_on() {
                    if world.ctx.fr_state.status(entry) != (EntryState::Running, epoch) {
                        inv.wake = inv.wake.min(now);
                    }
                }
            }
        } else {
            let inv = invocation.as_mut().expect("invocation scheduled");
            let now = inv.wake;
            end = end.max(now);
            inv.advance(&mut world, now);
        }
    }

    let (result, record) = match invocation {
        Some(inv) => (inv.result, Some(inv.record)),
        None => (None, None),
    };
    EpisodeOutcome {
        result,
        record,
        report: freshen.map(|f| f.report),
        end,
        events,
        upstream_fetches: world.fetches,
    }
}
