//! Runtime-scoped cache of prefetched objects with TTL expiry.
//!
//! Records are immutable once written and handed out behind `Arc`, so a
//! reader racing a writer sees either the old record or the new one in full.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, RwLock};

use crate::time::{SimDuration, SimTime};
use crate::value::{ObjectKey, Value};

#[derive(Debug, Clone, PartialEq)]
pub struct CacheRecord {
    pub key: ObjectKey,
    pub value: Value,
    pub fetched_at: SimTime,
    pub ttl: SimDuration,
    pub version: u64,
}

impl CacheRecord {
    /// Served only while `now - fetched_at <= ttl`.
    pub fn is_fresh(&self, now: SimTime) -> bool {
        now.since(self.fetched_at) <= self.ttl
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CacheStats {
    pub hits: u64,
    pub misses: u64,
    pub puts: u64,
    pub invalidations: u64,
}

#[derive(Debug, Default)]
struct Counters {
    hits: AtomicU64,
    misses: AtomicU64,
    puts: AtomicU64,
    invalidations: AtomicU64,
}

#[derive(Debug, Default)]
struct Inner {
    records: BTreeMap<ObjectKey, Arc<CacheRecord>>,
    // survives invalidation so versions stay monotone per key
    versions: BTreeMap<ObjectKey, u64>,
}

#[derive(Debug, Default)]
pub struct FreshenCache {
    inner: RwLock<Inner>,
    counters: Counters,
}

impl FreshenCache {
    pub fn new() -> Self {
        Self::default()
    }

    /// The cached value if present and unexpired.
    pub fn get(&self, key: &ObjectKey, now: SimTime) -> Option<Value> {
        self.get_record(key, now).map(|r| r.value.clone())
    }

    /// Like [`get`](Self::get) but returns the whole record.
    pub fn get_record(&self, key: &ObjectKey, now: SimTime) -> Option<Arc<CacheRecord>> {
        let found = {
            let inner = self.inner.read().expect("cache lock poisoned");
            inner.records.get(key).filter(|r| r.is_fresh(now)).cloned()
        };
        let counter = if found.is_some() {
            &self.counters.hits
        } else {
            &self.counters.misses
        };
        counter.fetch_add(1, Ordering::Relaxed);
        found
    }

    /// Record lookup that ignores expiry and does not touch statistics.
    pub fn peek(&self, key: &ObjectKey) -> Option<Arc<CacheRecord>> {
        self.inner
            .read()
            .expect("cache lock poisoned")
            .records
            .get(key)
            .cloned()
    }

    /// Stores `value`, returning the new version for `key`.
    pub fn put(&self, key: ObjectKey, value: Value, ttl: SimDuration, now: SimTime) -> u64 {
        let mut inner = self.inner.write().expect("cache lock poisoned");
        let version = inner.versions.entry(key.clone()).or_insert(0);
        *version += 1;
        let version = *version;
        let record = Arc::new(CacheRecord {
            key: key.clone(),
            value,
            fetched_at: now,
            ttl,
            version,
        });
        inner.records.insert(key, record);
        self.counters.puts.fetch_add(1, Ordering::Relaxed);
        version
    }

    pub fn invalidate(&self, key: &ObjectKey) {
        let removed = self
            .inner
            .write()
            .expect("cache lock poisoned")
            .records
            .remove(key)
            .is_some();
        if removed {
            self.counters.invalidations.fetch_add(1, Ordering::Relaxed);
        }
    }

    pub fn clear(&self) {
        let mut inner = self.inner.write().expect("cache lock poisoned");
        inner.records.clear();
    }

    pub fn len(&self) -> usize {
        self.inner.read().expect("cache lock poisoned").records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn stats(&self) -> CacheStats {
        CacheStats {
            hits: self.counters.hits.load(Ordering::Relaxed),
            misses: self.counters.misses.load(Ordering::Relaxed),
            puts: self.counters.puts.load(Ordering::Relaxed),
            invalidations: self.counters.invalidations.load(Ordering::Relaxed),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn key() -> ObjectKey {
        ObjectKey::new("store", "model")
    }

    fn ms(x: f64) -> SimTime {
        SimTime::from_millis(x)
    }

    #[test]
    fn hit_before_ttl_miss_after() {
        let c = FreshenCache::new();
        c.put(key(), Value::Int(7), SimDuration::from_millis(5000.0), ms(0.0));
        assert_eq!(c.get(&key(), ms(4000.0)), Some(Value::Int(7)));
        assert_eq!(c.get(&key(), ms(5001.0)), None);
    }

    #[test]
    fn ttl_boundary_is_inclusive_to_the_tick() {
        let c = FreshenCache::new();
        let ttl = SimDuration::from_millis(5000.0);
        c.put(key(), Value::Int(1), ttl, SimTime::ZERO);
        assert!(c.get(&key(), SimTime::ZERO + ttl).is_some());
        assert!(c.get(&key(), SimTime::ZERO + ttl + SimDuration::TICK).is_none());
    }

    #[test]
    fn zero_ttl_only_serves_the_same_instant() {
        let c = FreshenCache::new();
        c.put(key(), Value::Int(1), SimDuration::ZERO, ms(3.0));
        assert!(c.get(&key(), ms(3.0)).is_some());
        assert!(c.get(&key(), ms(3.001)).is_none());
    }

    #[test]
    fn overwrite_bumps_version_by_one() {
        let c = FreshenCache::new();
        let ttl = SimDuration::from_millis(10.0);
        let v1 = c.put(key(), Value::Int(1), ttl, ms(0.0));
        let v2 = c.put(key(), Value::Int(2), ttl, ms(1.0));
        assert_eq!(v2, v1 + 1);
        c.invalidate(&key());
        let v3 = c.put(key(), Value::Int(3), ttl, ms(2.0));
        assert_eq!(v3, v2 + 1);
    }

    #[test]
    fn invalidate_forces_miss() {
        let c = FreshenCache::new();
        c.put(key(), Value::Int(1), SimDuration::from_millis(1e6), ms(0.0));
        c.invalidate(&key());
        assert_eq!(c.get(&key(), ms(1.0)), None);
        assert_eq!(c.stats().invalidations, 1);
        assert_eq!(c.stats().misses, 1);
    }

    #[test]
    fn stats_count_hits_and_misses() {
        let c = FreshenCache::new();
        assert!(c.get(&key(), ms(0.0)).is_none());
        c.put(key(), Value::Unit, SimDuration::from_millis(1.0), ms(0.0));
        assert!(c.get(&key(), ms(0.5)).is_some());
        let s = c.stats();
        assert_eq!((s.hits, s.misses, s.puts), (1, 1, 1));
    }
}
