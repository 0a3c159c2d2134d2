//! Thread-based freshen execution and the invocation-side wrappers.
//!
//! [`Coordinator::spawn_freshen`] runs a plan on its own thread while the
//! invocation calls [`Coordinator::fr_fetch`] / [`Coordinator::fr_warm`] at
//! its resource-access sites. Both sides meet only through [`FrState`].

use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use thiserror::Error;

use crate::time::{Clock, SimTime};
use crate::value::{EndpointId, ObjectKey, Value};

use super::plan::{FreshenPlan, PlanAction};
use super::state::{Access, ClaimToken, EntryKind, FrState, WaitOutcome};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{0}")]
pub struct ActionError(pub String);

/// Performs the network side of freshen actions.
pub trait ActionExecutor: Send + Sync {
    fn prefetch(&self, key: &ObjectKey) -> Result<Value, ActionError>;
    fn warm(&self, endpoint: &EndpointId) -> Result<(), ActionError>;
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ActionOutcome {
    Performed,
    /// The entry was already running or fresh when freshen reached it.
    Skipped,
    Failed(FailureReason),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FailureReason {
    Network(String),
    /// The claim was taken over by a waiting invocation before completion.
    Superseded,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActionRecord {
    pub entry: usize,
    pub step: usize,
    pub action: PlanAction,
    pub outcome: ActionOutcome,
    pub started_at: SimTime,
    pub finished_at: SimTime,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct FreshenReport {
    pub function: String,
    pub issued_at: SimTime,
    pub actions: Vec<ActionRecord>,
}

impl FreshenReport {
    pub fn new(function: impl Into<String>, issued_at: SimTime) -> Self {
        Self {
            function: function.into(),
            issued_at,
            actions: Vec::new(),
        }
    }

    fn count(&self, f: impl Fn(&ActionOutcome) -> bool) -> usize {
        self.actions.iter().filter(|a| f(&a.outcome)).count()
    }

    pub fn performed(&self) -> usize {
        self.count(|o| *o == ActionOutcome::Performed)
    }

    pub fn skipped(&self) -> usize {
        self.count(|o| *o == ActionOutcome::Skipped)
    }

    pub fn failed(&self) -> usize {
        self.count(|o| matches!(o, ActionOutcome::Failed(_)))
    }

    pub fn outcome(&self, entry: usize) -> Option<&ActionOutcome> {
        self.actions.iter().find(|a| a.entry == entry).map(|a| &a.outcome)
    }
}

/// Which branch of the wrapper resolved the access.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Branch {
    /// The entry already held a fresh result.
    FinishedHit,
    /// Freshen was running; the wrapper waited and used its result.
    RunningWait,
    /// The wrapper ran the action itself, possibly after a failed or
    /// timed-out wait.
    SelfExecuted { after_wait: bool },
}

pub struct Coordinator<C> {
    state: Arc<FrState>,
    clock: C,
    wait_timeout: Duration,
}

impl<C: Clock + Clone + 'static> Coordinator<C> {
    pub fn new(state: Arc<FrState>, clock: C, wait_timeout: Duration) -> Self {
        Self {
            state,
            clock,
            wait_timeout,
        }
    }

    pub fn state(&self) -> &Arc<FrState> {
        &self.state
    }

    /// Blocks until the running epoch ends or the wait timeout passes.
    pub fn fr_wait(&self, index: usize, epoch: u64) -> WaitOutcome {
        self.state.wait(index, epoch, self.wait_timeout)
    }

    /// Resolves an entry to either a fresh hit or a claim held by the caller.
    fn acquire(&self, index: usize) -> (Access, bool) {
        let mut waited = false;
        loop {
            match self.state.enter(index, self.clock.now()) {
                Access::Pending { epoch } => {
                    waited = true;
                    if self.fr_wait(index, epoch) == WaitOutcome::TimedOut {
                        if let Some(token) = self.state.take_over(index, epoch, self.clock.now()) {
                            return (Access::Claimed(token), waited);
                        }
                    }
                }
                other => return (other, waited),
            }
        }
    }

    /// Fetch wrapper: returns the freshened result when there is one, waits
    /// for an in-flight freshen, or claims the entry and runs `fetch`.
    pub fn fr_fetch<E>(&self, index: usize, fetch: impl FnOnce() -> Result<Value, E>) -> Result<(Value, Branch), E> {
        let (access, waited) = self.acquire(index);
        let resolved = match access {
            Access::Hit(value) => {
                let branch = if waited {
                    Branch::RunningWait
                } else {
                    Branch::FinishedHit
                };
                (value.unwrap_or_default(), branch)
            }
            Access::Claimed(token) => (self.execute(token, fetch)?, Branch::SelfExecuted { after_wait: waited }),
            Access::Pending { .. } => unreachable!("acquire never returns pending"),
        };
        self.state.consume(index, self.clock.now());
        Ok(resolved)
    }

    /// Warm wrapper: same branches as [`fr_fetch`](Self::fr_fetch) without a
    /// result.
    pub fn fr_warm<E>(&self, index: usize, warm: impl FnOnce() -> Result<(), E>) -> Result<Branch, E> {
        let (access, waited) = self.acquire(index);
        match access {
            Access::Hit(_) if waited => Ok(Branch::RunningWait),
            Access::Hit(_) => Ok(Branch::FinishedHit),
            Access::Claimed(token) => {
                self.execute(token, || warm().map(|()| Value::Unit))?;
                Ok(Branch::SelfExecuted { after_wait: waited })
            }
            Access::Pending { .. } => unreachable!("acquire never returns pending"),
        }
    }

    fn execute<E>(&self, token: ClaimToken, action: impl FnOnce() -> Result<Value, E>) -> Result<Value, E> {
        match action() {
            Ok(value) => {
                let stored = self.state.spec(token.index).kind.is_fetch().then(|| value.clone());
                // a stale claim cannot happen for the invocation: nothing takes over from it
                let _ = self.state.complete(token, stored, self.clock.now());
                Ok(value)
            }
            Err(e) => {
                let _ = self.state.fail(token, self.clock.now());
                Err(e)
            }
        }
    }

    /// Runs `plan` on the calling thread.
    pub fn run_freshen(&self, plan: &FreshenPlan, executor: &dyn ActionExecutor) -> FreshenReport {
        run_plan(&self.state, &self.clock, plan, executor)
    }

    /// Runs `plan` on a new thread.
    pub fn spawn_freshen(&self, plan: FreshenPlan, executor: Arc<dyn ActionExecutor>) -> JoinHandle<FreshenReport> {
        let state = Arc::clone(&self.state);
        let clock = self.clock.clone();
        std::thread::spawn(move || run_plan(&state, &clock, &plan, executor.as_ref()))
    }
}

fn run_plan(state: &FrState, clock: &dyn Clock, plan: &FreshenPlan, executor: &dyn ActionExecutor) -> FreshenReport {
    let mut report = FreshenReport::new(plan.function.clone(), clock.now());
    for planned in &plan.actions {
        let started_at = clock.now();
        let outcome = match state.claim_for_freshen(planned.entry, started_at) {
            None => ActionOutcome::Skipped,
            Some(token) => {
                let result = match &state.spec(planned.entry).kind {
                    EntryKind::Fetch(key) => executor.prefetch(key).map(Some),
                    EntryKind::Warm(endpoint) => executor.warm(endpoint).map(|()| None),
                };
                match result {
                    Ok(value) => match state.complete(token, value, clock.now()) {
                        Ok(()) => ActionOutcome::Performed,
                        Err(_) => ActionOutcome::Failed(FailureReason::Superseded),
                    },
                    Err(e) => {
                        let _ = state.fail(token, clock.now());
                        ActionOutcome::Failed(FailureReason::Network(e.0))
                    }
                }
            }
        };
        tracing::debug!(entry = planned.entry, action = %planned.action, ?outcome, "freshen action");
        report.actions.push(ActionRecord {
            entry: planned.entry,
            step: planned.step,
            action: planned.action.clone(),
            outcome,
            started_at,
            finished_at: clock.now(),
        });
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cache::FreshenCache;
    use crate::freshen::plan::{entry_specs, infer_plan};
    use crate::freshen::state::{ConsumePolicy, EntryState};
    use crate::function::sample_lambda;
    use crate::time::{ManualClock, SimDuration};
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Barrier;

    #[derive(Default)]
    struct Counting {
        fetches: AtomicUsize,
        warms: AtomicUsize,
        fail_fetch: bool,
    }

    impl ActionExecutor for Counting {
        fn prefetch(&self, key: &ObjectKey) -> Result<Value, ActionError> {
            self.fetches.fetch_add(1, Ordering::SeqCst);
            if self.fail_fetch {
                return Err(ActionError("unreachable".into()));
            }
            Ok(Value::text(key.to_string()))
        }
        fn warm(&self, _: &EndpointId) -> Result<(), ActionError> {
            self.warms.fetch_add(1, Ordering::SeqCst);
            Ok(())
        }
    }

    fn setup() -> (Coordinator<ManualClock>, FreshenPlan) {
        let f = sample_lambda("store", 1.0, 10);
        let plan = infer_plan(&f);
        let specs = entry_specs(&f, &plan, SimDuration::from_millis(1000.0));
        let state = Arc::new(FrState::new(specs, Arc::new(FreshenCache::new()), ConsumePolicy::default()));
        (Coordinator::new(state, ManualClock::new(), Duration::from_secs(5)), plan)
    }

    #[test]
    fn freshen_alone_finishes_both_entries() {
        let (c, plan) = setup();
        let exec = Counting::default();
        let report = c.run_freshen(&plan, &exec);
        assert_eq!(report.performed(), 2);
        let snap = c.state().snapshot();
        assert_eq!(snap[0].state, EntryState::Finished);
        assert_eq!(snap[0].result, Some(Value::text("store/input-object")));
        assert_eq!(snap[1].state, EntryState::Finished);
        assert_eq!(snap[1].result, None);
    }

    #[test]
    fn wrappers_hit_after_freshen() {
        let (c, plan) = setup();
        c.run_freshen(&plan, &Counting::default());
        let (v, b) = c.fr_fetch(0, || Err::<Value, ()>(())).unwrap();
        assert_eq!(b, Branch::FinishedHit);
        assert_eq!(v, Value::text("store/input-object"));
        assert_eq!(c.fr_warm(1, || Err::<(), ()>(())).unwrap(), Branch::FinishedHit);
    }

    #[test]
    fn freshen_skips_entry_the_invocation_finished() {
        let (c, plan) = setup();
        let (_, b) = c.fr_fetch(0, || Ok::<_, ()>(Value::Int(1))).unwrap();
        assert_eq!(b, Branch::SelfExecuted { after_wait: false });
        let exec = Counting::default();
        let report = c.run_freshen(&plan, &exec);
        assert_eq!(report.outcome(0), Some(&ActionOutcome::Skipped));
        assert_eq!(report.outcome(1), Some(&ActionOutcome::Performed));
        assert_eq!(exec.fetches.load(Ordering::SeqCst), 0);
    }

    #[test]
    fn failed_prefetch_falls_through_to_invocation() {
        let (c, plan) = setup();
        let exec = Counting {
            fail_fetch: true,
            ..Default::default()
        };
        let report = c.run_freshen(&plan, &exec);
        assert!(matches!(report.outcome(0), Some(ActionOutcome::Failed(FailureReason::Network(_)))));
        assert_eq!(report.outcome(1), Some(&ActionOutcome::Performed));
        let (v, b) = c.fr_fetch(0, || Ok::<_, ()>(Value::Int(3))).unwrap();
        assert_eq!((v, b), (Value::Int(3), Branch::SelfExecuted { after_wait: false }));
    }

    #[test]
    fn invocation_waits_for_running_freshen() {
        let (c, _) = setup();
        let token = c.state().claim_for_freshen(0, SimTime::ZERO).unwrap();
        let c = Arc::new(c);
        let barrier = Arc::new(Barrier::new(2));
        let (c2, b2) = (Arc::clone(&c), Arc::clone(&barrier));
        let waiter = std::thread::spawn(move || {
            b2.wait();
            c2.fr_fetch(0, || Ok::<_, ()>(Value::Int(99))).unwrap()
        });
        barrier.wait();
        std::thread::sleep(Duration::from_millis(30));
        c.state().complete(token, Some(Value::Int(7)), SimTime::ZERO).unwrap();
        assert_eq!(waiter.join().unwrap(), (Value::Int(7), Branch::RunningWait));
    }

    #[test]
    fn stalled_freshen_is_taken_over_after_timeout() {
        let f = sample_lambda("store", 1.0, 10);
        let plan = infer_plan(&f);
        let state = Arc::new(FrState::new(
            entry_specs(&f, &plan, SimDuration::from_millis(1000.0)),
            Arc::new(FreshenCache::new()),
            ConsumePolicy::default(),
        ));
        let c = Coordinator::new(Arc::clone(&state), ManualClock::new(), Duration::from_millis(20));
        let stalled = state.claim_for_freshen(0, SimTime::ZERO).unwrap();
        let (v, b) = c.fr_fetch(0, || Ok::<_, ()>(Value::Int(1))).unwrap();
        assert_eq!((v, b), (Value::Int(1), Branch::SelfExecuted { after_wait: true }));
        assert!(state.complete(stalled, Some(Value::Int(2)), SimTime::ZERO).is_err());
        assert_eq!(state.entry(0).result, Some(Value::Int(1)));
    }

    #[test]
    fn spawned_freshen_races_invocation_without_double_fetch() {
        for _ in 0..200 {
            let (c, plan) = setup();
            let exec = Arc::new(Counting::default());
            let handle = c.spawn_freshen(plan, exec.clone());
            let mut own = 0;
            let (v, _) = c
                .fr_fetch(0, || {
                    own += 1;
                    Ok::<_, ()>(Value::text("store/input-object"))
                })
                .unwrap();
            handle.join().unwrap();
            assert_eq!(v, Value::text("store/input-object"));
            assert_eq!(exec.fetches.load(Ordering::SeqCst) + own, 1);
        }
    }
}
