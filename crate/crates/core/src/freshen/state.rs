//! The runtime-scoped `fr_state` list.
//!
//! Each entry is guarded by its own mutex and condition variable. All state
//! changes go through the methods here, which enforce the legal transitions
//! (idle -> running -> finished | failed, failed -> idle, finished -> idle on
//! expiry or invalidation) and append every transition to a log that tests
//! replay to check monotonicity.
//!
//! A claim returns a [`ClaimToken`] carrying the entry's epoch. The epoch
//! advances on every idle -> running transition, so at most one actor holds a
//! live token for an entry at any time, and a stalled actor that lost its
//! claim to a take-over cannot overwrite the newer result.

use std::fmt;
use std::sync::{Arc, Condvar, Mutex, MutexGuard};
use std::time::{Duration, Instant};

use thiserror::Error;

use crate::cache::FreshenCache;
use crate::time::{SimDuration, SimTime};
use crate::value::{EndpointId, ObjectKey, Value};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EntryState {
    Idle,
    Running,
    Finished,
    Failed,
}

impl EntryState {
    pub fn as_str(self) -> &'static str {
        match self {
            EntryState::Idle => "idle",
            EntryState::Running => "running",
            EntryState::Finished => "finished",
            EntryState::Failed => "failed",
        }
    }

    /// Whether `self -> to` is one of the allowed transitions.
    pub fn can_become(self, to: EntryState) -> bool {
        use EntryState::*;
        matches!(
            (self, to),
            (Idle, Running) | (Running, Finished) | (Running, Failed) | (Failed, Idle) | (Finished, Idle)
        )
    }
}

impl fmt::Display for EntryState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Actor {
    Freshen,
    Invocation,
}

/// What an entry freshens.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EntryKind {
    Fetch(ObjectKey),
    Warm(EndpointId),
}

impl EntryKind {
    pub fn is_fetch(&self) -> bool {
        matches!(self, EntryKind::Fetch(_))
    }

    pub fn endpoint(&self) -> &EndpointId {
        match self {
            EntryKind::Fetch(k) => &k.endpoint,
            EntryKind::Warm(e) => e,
        }
    }
}

/// Static description of one entry.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EntrySpec {
    /// Step index in the function body.
    pub step: usize,
    pub kind: EntryKind,
    pub ttl: SimDuration,
}

/// What to do with a finished fetch entry once an invocation has read it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ConsumePolicy {
    #[default]
    PersistUntilTtl,
    InvalidateOnConsume,
}

impl std::str::FromStr for ConsumePolicy {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "persist" | "persist-until-ttl" => Ok(ConsumePolicy::PersistUntilTtl),
            "invalidate" | "invalidate-on-consume" => Ok(ConsumePolicy::InvalidateOnConsume),
            other => Err(format!(
                "unknown consume policy `{other}` (expected persist-until-ttl or invalidate-on-consume)"
            )),
        }
    }
}

/// Point-in-time copy of an entry.
#[derive(Debug, Clone, PartialEq)]
pub struct FreshenEntry {
    pub index: usize,
    pub step: usize,
    pub kind: EntryKind,
    pub state: EntryState,
    pub result: Option<Value>,
    pub ttl: SimDuration,
    pub freshened_at: Option<SimTime>,
    pub epoch: u64,
    pub owner: Option<Actor>,
}

/// Proof of a successful idle -> running claim.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ClaimToken {
    pub index: usize,
    pub epoch: u64,
    pub owner: Actor,
}

/// Result of an invocation reaching a wrapper.
#[derive(Debug, Clone, PartialEq)]
pub enum Access {
    /// Entry is finished and fresh. Fetch entries carry their result.
    Hit(Option<Value>),
    /// Another actor is running the action for this epoch.
    Pending { epoch: u64 },
    /// The caller now owns the entry and must run the action itself.
    Claimed(ClaimToken),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WaitOutcome {
    /// The epoch ended (finished, failed or replaced).
    Settled,
    TimedOut,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("claim on entry {index} epoch {epoch} is no longer current")]
pub struct StaleClaim {
    pub index: usize,
    pub epoch: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Transition {
    pub index: usize,
    pub epoch: u64,
    pub from: EntryState,
    pub to: EntryState,
    pub actor: Option<Actor>,
    pub at: SimTime,
}

#[derive(Debug)]
struct EntryData {
    state: EntryState,
    result: Option<Value>,
    freshened_at: Option<SimTime>,
    epoch: u64,
    owner: Option<Actor>,
}

#[derive(Debug)]
struct Slot {
    spec: EntrySpec,
    data: Mutex<EntryData>,
    changed: Condvar,
}

/// The shared per-runtime freshen state.
#[derive(Debug)]
pub struct FrState {
    slots: Vec<Slot>,
    cache: Arc<FreshenCache>,
    consume: ConsumePolicy,
    log: Mutex<Vec<Transition>>,
}

impl FrState {
    pub fn new(specs: Vec<EntrySpec>, cache: Arc<FreshenCache>, consume: ConsumePolicy) -> Self {
        let slots = specs
            .into_iter()
            .map(|spec| Slot {
                spec,
                data: Mutex::new(EntryData {
                    state: EntryState::Idle,
                    result: None,
                    freshened_at: None,
                    epoch: 0,
                    owner: None,
                }),
                changed: Condvar::new(),
            })
            .collect();
        Self {
            slots,
            cache,
            consume,
            log: Mutex::new(Vec::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn spec(&self, index: usize) -> &EntrySpec {
        &self.slots[index].spec
    }

    pub fn cache(&self) -> &Arc<FreshenCache> {
        &self.cache
    }

    pub fn consume_policy(&self) -> ConsumePolicy {
        self.consume
    }

    fn lock(&self, index: usize) -> MutexGuard<'_, EntryData> {
        self.slots[index].data.lock().expect("fr_state entry poisoned")
    }

    fn transition(&self, index: usize, data: &mut EntryData, to: EntryState, actor: Option<Actor>, now: SimTime) {
        let from = data.state;
        assert!(from.can_become(to), "illegal fr_state transition {from} -> {to} on entry {index}");
        if to == EntryState::Running {
            data.epoch += 1;
        }
        data.state = to;
        match to {
            EntryState::Running => data.owner = actor,
            EntryState::Idle => {
                data.owner = None;
                data.result = None;
            }
            EntryState::Failed => data.result = None,
            EntryState::Finished => {}
        }
        self.log.lock().expect("transition log poisoned").push(Transition {
            index,
            epoch: data.epoch,
            from,
            to,
            actor,
            at: now,
        });
        self.slots[index].changed.notify_all();
    }

    /// Finished entries whose result is no longer servable go back to idle.
    /// Only invocation reads count toward cache statistics.
    fn expire_if_stale(&self, index: usize, data: &mut EntryData, now: SimTime, count: bool) -> Option<Option<Value>> {
        if data.state != EntryState::Finished {
            return None;
        }
        let spec = &self.slots[index].spec;
        let fresh = match &spec.kind {
            EntryKind::Fetch(key) if count => self.cache.get(key, now).map(Some),
            EntryKind::Fetch(key) => self
                .cache
                .peek(key)
                .filter(|r| r.is_fresh(now))
                .map(|r| Some(r.value.clone())),
            EntryKind::Warm(_) => data
                .freshened_at
                .filter(|&at| now.since(at) <= spec.ttl)
                .map(|_| None),
        };
        if fresh.is_none() {
            self.transition(index, data, EntryState::Idle, None, now);
        }
        fresh
    }

    fn claim(&self, index: usize, data: &mut EntryData, actor: Actor, now: SimTime) -> ClaimToken {
        if data.state == EntryState::Failed {
            self.transition(index, data, EntryState::Idle, Some(actor), now);
        }
        self.transition(index, data, EntryState::Running, Some(actor), now);
        ClaimToken {
            index,
            epoch: data.epoch,
            owner: actor,
        }
    }

    /// Invocation-side entry point used by the wrappers.
    pub fn enter(&self, index: usize, now: SimTime) -> Access {
        let mut data = self.lock(index);
        if let Some(result) = self.expire_if_stale(index, &mut data, now, true) {
            return Access::Hit(result);
        }
        match data.state {
            EntryState::Running => Access::Pending { epoch: data.epoch },
            EntryState::Idle | EntryState::Failed => {
                Access::Claimed(self.claim(index, &mut data, Actor::Invocation, now))
            }
            EntryState::Finished => unreachable!("stale finished entries were expired above"),
        }
    }

    /// Freshen-side claim. `None` means the action should be skipped because
    /// the entry is already running or holds a fresh result.
    pub fn claim_for_freshen(&self, index: usize, now: SimTime) -> Option<ClaimToken> {
        let mut data = self.lock(index);
        if self.expire_if_stale(index, &mut data, now, false).is_some() {
            return None;
        }
        match data.state {
            EntryState::Running => None,
            EntryState::Idle | EntryState::Failed => Some(self.claim(index, &mut data, Actor::Freshen, now)),
            EntryState::Finished => unreachable!("stale finished entries were expired above"),
        }
    }

    fn check_token(&self, token: &ClaimToken, data: &EntryData) -> Result<(), StaleClaim> {
        if data.state == EntryState::Running && data.epoch == token.epoch {
            Ok(())
        } else {
            Err(StaleClaim {
                index: token.index,
                epoch: token.epoch,
            })
        }
    }

    /// Records the action's success. Fetch entries store `value` in the
    /// cache with the entry's TTL.
    pub fn complete(&self, token: ClaimToken, value: Option<Value>, now: SimTime) -> Result<(), StaleClaim> {
        let index = token.index;
        let mut data = self.lock(index);
        self.check_token(&token, &data)?;
        let spec = &self.slots[index].spec;
        if let EntryKind::Fetch(key) = &spec.kind {
            let value = value.unwrap_or_default();
            self.cache.put(key.clone(), value.clone(), spec.ttl, now);
            data.result = Some(value);
        }
        data.freshened_at = Some(now);
        self.transition(index, &mut data, EntryState::Finished, Some(token.owner), now);
        Ok(())
    }

    pub fn fail(&self, token: ClaimToken, now: SimTime) -> Result<(), StaleClaim> {
        let mut data = self.lock(token.index);
        self.check_token(&token, &data)?;
        self.transition(token.index, &mut data, EntryState::Failed, Some(token.owner), now);
        Ok(())
    }

    /// Takes over an entry whose running epoch outlived the caller's wait:
    /// the stalled attempt is marked failed and a new epoch is claimed for
    /// the invocation. `None` if the epoch already ended.
    pub fn take_over(&self, index: usize, epoch: u64, now: SimTime) -> Option<ClaimToken> {
        let mut data = self.lock(index);
        if data.state != EntryState::Running || data.epoch != epoch {
            return None;
        }
        self.transition(index, &mut data, EntryState::Failed, Some(Actor::Invocation), now);
        Some(self.claim(index, &mut data, Actor::Invocation, now))
    }

    /// Blocks the calling thread until the running `epoch` ends or `timeout`
    /// of real time passes.
    pub fn wait(&self, index: usize, epoch: u64, timeout: Duration) -> WaitOutcome {
        let deadline = Instant::now() + timeout;
        let slot = &self.slots[index];
        let mut data = self.lock(index);
        loop {
            if data.state != EntryState::Running || data.epoch != epoch {
                return WaitOutcome::Settled;
            }
            let left = deadline.saturating_duration_since(Instant::now());
            if left.is_zero() {
                return WaitOutcome::TimedOut;
            }
            data = slot
                .changed
                .wait_timeout(data, left)
                .expect("fr_state entry poisoned")
                .0;
        }
    }

    /// Applies the consume policy after an invocation used a fetch result.
    pub fn consume(&self, index: usize, now: SimTime) {
        if self.consume == ConsumePolicy::InvalidateOnConsume {
            self.invalidate(index, now);
        }
    }

    /// Drops a finished entry back to idle and evicts its cached result.
    pub fn invalidate(&self, index: usize, now: SimTime) {
        let mut data = self.lock(index);
        if let EntryKind::Fetch(key) = &self.slots[index].spec.kind {
            self.cache.invalidate(key);
        }
        if data.state == EntryState::Finished {
            self.transition(index, &mut data, EntryState::Idle, None, now);
        }
    }

    pub fn status(&self, index: usize) -> (EntryState, u64) {
        let data = self.lock(index);
        (data.state, data.epoch)
    }

    pub fn entry(&self, index: usize) -> FreshenEntry {
        let data = self.lock(index);
        let spec = &self.slots[index].spec;
        FreshenEntry {
            index,
            step: spec.step,
            kind: spec.kind.clone(),
            state: data.state,
            result: data.result.clone(),
            ttl: spec.ttl,
            freshened_at: data.freshened_at,
            epoch: data.epoch,
            owner: data.owner,
        }
    }

    pub fn snapshot(&self) -> Vec<FreshenEntry> {
        (0..self.len()).map(|i| self.entry(i)).collect()
    }

    pub fn transitions(&self) -> Vec<Transition> {
        self.log.lock().expect("transition log poisoned").clone()
    }
}

/// Checks a transition log: every step is legal, continues from the
/// previous state of the same entry, and epochs never go backwards.
pub fn check_transitions(log: &[Transition], entries: usize) -> Result<(), String> {
    let mut last = vec![(EntryState::Idle, 0u64); entries];
    for t in log {
        let (state, epoch) = last
            .get(t.index)
            .copied()
            .ok_or_else(|| format!("transition on unknown entry {}", t.index))?;
        if t.from != state {
            return Err(format!("entry {} moved from {} but was {}", t.index, t.from, state));
        }
        if !t.from.can_become(t.to) {
            return Err(format!("entry {} took illegal step {} -> {}", t.index, t.from, t.to));
        }
        let expected = if t.to == EntryState::Running { epoch + 1 } else { epoch };
        if t.epoch != expected {
            return Err(format!("entry {} epoch jumped from {} to {}", t.index, epoch, t.epoch));
        }
        last[t.index] = (t.to, t.epoch);
    }
    Ok(())
}
