//! Simulated time.
//!
//! Everything in the crate runs on a virtual clock with microsecond ticks.
//! Configuration is expressed in milliseconds (possibly fractional, e.g. a
//! 0.1 ms on-host round trip) and converted once, so simulations are exact
//! integer arithmetic from then on.

use std::fmt;
use std::ops::{Add, AddAssign, Mul, Sub};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Instant;

/// Microseconds per millisecond.
const US_PER_MS: f64 = 1000.0;

/// A point on the simulated timeline, in microseconds since the start of the run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct SimTime(u64);

/// A span of simulated time, in microseconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct SimDuration(u64);

impl SimTime {
    pub const ZERO: SimTime = SimTime(0);

    pub const fn from_micros(us: u64) -> Self {
        SimTime(us)
    }

    pub fn from_millis(ms: f64) -> Self {
        SimTime(ms_to_us(ms))
    }

    pub const fn as_micros(self) -> u64 {
        self.0
    }

    pub fn as_millis_f64(self) -> f64 {
        self.0 as f64 / US_PER_MS
    }

    /// Elapsed time since `earlier`, saturating at zero.
    pub fn since(self, earlier: SimTime) -> SimDuration {
        SimDuration(self.0.saturating_sub(earlier.0))
    }

    pub fn saturating_sub(self, d: SimDuration) -> SimTime {
        SimTime(self.0.saturating_sub(d.0))
    }
}

impl SimDuration {
    pub const ZERO: SimDuration = SimDuration(0);
    /// One simulation tick.
    pub const TICK: SimDuration = SimDuration(1);

    pub const fn from_micros(us: u64) -> Self {
        SimDuration(us)
    }

    pub fn from_millis(ms: f64) -> Self {
        SimDuration(ms_to_us(ms))
    }

    pub const fn as_micros(self) -> u64 {
        self.0
    }

    pub fn as_millis_f64(self) -> f64 {
        self.0 as f64 / US_PER_MS
    }

    pub fn is_zero(self) -> bool {
        self.0 == 0
    }

    pub fn saturating_sub(self, other: SimDuration) -> SimDuration {
        SimDuration(self.0.saturating_sub(other.0))
    }
}

fn ms_to_us(ms: f64) -> u64 {
    if !ms.is_finite() || ms <= 0.0 {
        return 0;
    }
    (ms * US_PER_MS).round() as u64
}

impl Add<SimDuration> for SimTime {
    type Output = SimTime;
    fn add(self, rhs: SimDuration) -> SimTime {
        SimTime(self.0.saturating_add(rhs.0))
    }
}

impl AddAssign<SimDuration> for SimTime {
    fn add_assign(&mut self, rhs: SimDuration) {
        self.0 = self.0.saturating_add(rhs.0);
    }
}

impl Sub for SimTime {
    type Output = SimDuration;
    fn sub(self, rhs: SimTime) -> SimDuration {
        self.since(rhs)
    }
}

impl Add for SimDuration {
    type Output = SimDuration;
    fn add(self, rhs: SimDuration) -> SimDuration {
        SimDuration(self.0.saturating_add(rhs.0))
    }
}

impl AddAssign for SimDuration {
    fn add_assign(&mut self, rhs: SimDuration) {
        self.0 = self.0.saturating_add(rhs.0);
    }
}

impl Mul<u64> for SimDuration {
    type Output = SimDuration;
    fn mul(self, rhs: u64) -> SimDuration {
        SimDuration(self.0.saturating_mul(rhs))
    }
}

impl std::iter::Sum for SimDuration {
    fn sum<I: Iterator<Item = SimDuration>>(iter: I) -> SimDuration {
        iter.fold(SimDuration::ZERO, |a, b| a + b)
    }
}

impl fmt::Display for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "t={:.3}ms", self.as_millis_f64())
    }
}

impl fmt::Display for SimDuration {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.3}ms", self.as_millis_f64())
    }
}

/// A time source. The simulation drivers use [`ManualClock`]; the threaded
/// coordinator can run against either.
pub trait Clock: Send + Sync {
    fn now(&self) -> SimTime;
}

/// A clock that only moves when told to. Cheap to clone; clones share the time.
#[derive(Debug, Clone, Default)]
pub struct ManualClock {
    now_us: Arc<AtomicU64>,
}

impl ManualClock {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn starting_at(t: SimTime) -> Self {
        let clock = Self::new();
        clock.set(t);
        clock
    }

    pub fn set(&self, t: SimTime) {
        self.now_us.store(t.as_micros(), Ordering::SeqCst);
    }

    pub fn advance(&self, d: SimDuration) {
        self.now_us.fetch_add(d.as_micros(), Ordering::SeqCst);
    }
}

impl Clock for ManualClock {
    fn now(&self) -> SimTime {
        SimTime(self.now_us.load(Ordering::SeqCst))
    }
}

/// Wall-clock time since the clock was created.
#[derive(Debug, Clone)]
pub struct WallClock {
    origin: Instant,
}

impl WallClock {
    pub fn new() -> Self {
        Self {
            origin: Instant::now(),
        }
    }
}

impl Default for WallClock {
    fn default() -> Self {
        Self::new()
    }
}

impl Clock for WallClock {
    fn now(&self) -> SimTime {
        SimTime(self.origin.elapsed().as_micros() as u64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fractional_millis_round_to_ticks() {
        assert_eq!(SimDuration::from_millis(0.1).as_micros(), 100);
        assert_eq!(SimDuration::from_millis(1282.0).as_micros(), 1_282_000);
        assert_eq!(SimDuration::from_millis(-3.0), SimDuration::ZERO);
    }

    #[test]
    fn since_saturates() {
        let a = SimTime::from_millis(5.0);
        let b = SimTime::from_millis(7.0);
        assert_eq!(a.since(b), SimDuration::ZERO);
        assert_eq!(b - a, SimDuration::from_millis(2.0));
    }

    #[test]
    fn manual_clock_clones_share_time() {
        let c = ManualClock::new();
        let c2 = c.clone();
        c.advance(SimDuration::from_millis(3.0));
        assert_eq!(c2.now(), SimTime::from_millis(3.0));
    }
}
