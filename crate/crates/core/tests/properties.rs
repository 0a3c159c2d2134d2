mod common;

use std::sync::Arc;

use proptest::prelude::*;

use common::{transfer_ms, IW, MSS};
use freshen::freshen::FreshenMode;
use freshen::function::{FunctionDef, Operand};
use freshen::netsim::{Location, NetConfig, NetSim, Origin, RequestTag, SimEndpoint, WarmPolicy};
use freshen::runtime::{RuntimeConfig, RuntimeContext};
use freshen::sim::{run_episode, Episode, FreshenLaunch, TieBreak};
use freshen::time::{SimDuration, SimTime};
use freshen::value::{EndpointId, ObjectKey, Value};
use freshen::FreshenCache;

fn net(rtt: f64, bw: f64) -> NetSim {
    let ep = SimEndpoint::new("e", rtt, bw, Location::Edge).unwrap();
    NetSim::new(NetConfig::default(), [ep], 0)
}

fn tag() -> RequestTag {
    RequestTag::new(Origin::Harness)
}

/// Transfer duration in ms after `idle_ms` of silence, with or without a
/// warm first. Returns (cold, warmed).
fn cold_and_warmed(rtt: f64, bw: f64, prime: u64, idle_ms: f64, size: u64) -> (f64, f64) {
    let id = EndpointId::new("e");
    let mut out = [0.0; 2];
    for (i, warm) in [false, true].into_iter().enumerate() {
        let mut n = net(rtt, bw);
        let mut c = n.connect(&id, SimTime::ZERO, &tag()).unwrap();
        let at = c.established_at;
        let t = n.transfer(&mut c, prime, at, &tag()).unwrap();
        let mut start = t + SimDuration::from_millis(idle_ms);
        if warm {
            start = n.warm_cwnd(&mut c, &WarmPolicy::default(), start, &tag()).unwrap().done_at;
        }
        let done = n.transfer(&mut c, size, start, &tag()).unwrap();
        out[i] = done.since(start).as_millis_f64();
    }
    (out[0], out[1])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn warming_never_slows_a_transfer(
        rtt in 1.0f64..200.0,
        bw in 1_000.0f64..500_000.0,
        prime in 1u64..5_000_000,
        idle in 0.0f64..20_000.0,
        size in 1u64..20_000_000,
    ) {
        let (cold, warmed) = cold_and_warmed(rtt, bw, prime, idle, size);
        prop_assert!(warmed <= cold + 1e-9, "cold {cold} warmed {warmed}");
    }

    #[test]
    fn initial_window_transfers_gain_nothing(
        rtt in 1.0f64..200.0,
        bw in 1_000.0f64..500_000.0,
        size in 1u64..=(IW * MSS),
    ) {
        let (cold, warmed) = cold_and_warmed(rtt, bw, 1, 10_000.0, size);
        prop_assert_eq!(cold, warmed);
        prop_assert!((cold - transfer_ms(rtt, bw, size, IW)).abs() < 1e-9);
    }

    #[test]
    fn cwnd_stays_between_initial_window_and_cap(
        ops in proptest::collection::vec((0u8..4, 1u64..3_000_000, 0.0f64..3_000.0), 1..40),
    ) {
        let config = NetConfig::default();
        let id = EndpointId::new("e");
        let mut n = net(40.0, 125_000.0);
        let mut c = n.connect(&id, SimTime::ZERO, &tag()).unwrap();
        let mut t = c.established_at;
        for (op, size, gap) in ops {
            t = t + SimDuration::from_millis(gap);
            t = match op {
                0 => n.transfer(&mut c, size, t, &tag()).unwrap(),
                1 => n.warm_cwnd(&mut c, &WarmPolicy::default(), t, &tag()).unwrap().done_at,
                2 => n.keepalive_probe(&mut c, t, &tag()).unwrap().1,
                _ => { n.idle_decay(&mut c, t); t }
            };
            prop_assert!(c.cwnd >= config.initial_window && c.cwnd <= config.max_cwnd, "cwnd {}", c.cwnd);
        }
    }

    #[test]
    fn expired_records_are_never_served(
        fetched in 0u64..1_000_000,
        ttl in 0u64..1_000_000,
        offsets in proptest::collection::vec(0u64..3_000_000, 1..20),
    ) {
        let cache = FreshenCache::new();
        let key = ObjectKey::new("e", "o");
        cache.put(key.clone(), Value::Int(1), SimDuration::from_micros(ttl), SimTime::from_micros(fetched));
        for off in offsets {
            let hit = cache.get(&key, SimTime::from_micros(fetched + off)).is_some();
            prop_assert_eq!(hit, off <= ttl, "probe {} after fetch", off);
        }
    }
}

fn reader(ttl_ms: f64) -> FunctionDef {
    FunctionDef::builder("reader")
        .constant("ID", "input")
        .ttl_ms(ttl_ms)
        .data_get("e", None, Operand::constant("ID"))
        .compute(3.0)
        .build()
        .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    /// Dense invocations (many per TTL) spread over a horizon H, each
    /// preceded by a freshen, fetch about once per TTL.
    #[test]
    fn upstream_fetches_track_horizon_over_ttl(
        ttl_s in 1.0f64..10.0,
        ratio in 1.0f64..8.0,
        per_ttl in 10usize..20,
        lead_frac in 0.0f64..0.5,
    ) {
        let horizon_s = ratio * ttl_s;
        let count = (ratio * per_ttl as f64).ceil() as usize;
        let lead_ms = lead_frac * ttl_s * 1000.0 / per_ttl as f64;
        let ep = SimEndpoint::new("e", 20.0, 125_000.0, Location::Remote).unwrap().with_default_object_size(50_000);
        let mut n = NetSim::new(NetConfig::default(), [ep], 1);
        let mut ctx = RuntimeContext::init(reader(ttl_s * 1000.0), RuntimeConfig::default(), SimTime::ZERO).unwrap();
        let step = horizon_s * 1000.0 / count as f64;
        let mut fetches = 0;
        for i in 0..count {
            let arrival = SimTime::from_millis(1_000.0 + i as f64 * step);
            let plan = ctx.plan().clone();
            let issue = SimTime::from_millis(arrival.as_millis_f64() - lead_ms);
            let out = run_episode(&mut ctx, &mut n, Episode::invocation(Value::Int(0), arrival).with_freshen(plan, issue));
            fetches += out.upstream_fetches;
        }
        let expected = (horizon_s / ttl_s).ceil();
        prop_assert!((fetches as f64 - expected).abs() <= 1.0, "{fetches} fetches, ceil(H/T) = {expected}");
    }

    #[test]
    fn episodes_are_deterministic(seed in any::<u64>(), lead_ms in -200.0f64..2000.0, size in 1_000u64..5_000_000) {
        let run = || {
            let ep = SimEndpoint::new("e", 30.0, 80_000.0, Location::Remote)
                .unwrap()
                .with_default_object_size(size)
                .with_jitter(0.2);
            let mut n = NetSim::new(NetConfig::default(), [ep], seed);
            let f = FunctionDef::builder("rw")
                .constant("ID", "input")
                .ttl_ms(5_000.0)
                .data_get("e", None, Operand::constant("ID"))
                .compute_over(4.0, vec![Operand::Step(0), Operand::Args])
                .data_put("e", None, Operand::constant("ID"), Operand::Step(1), size)
                .build()
                .unwrap();
            let mut ctx = RuntimeContext::init(f, RuntimeConfig::default(), SimTime::ZERO).unwrap();
            run_episode(&mut ctx, &mut n, Episode::invocation(Value::Int(0), SimTime::ZERO).with_mode(FreshenMode::Disabled));
            let arrival = SimTime::from_millis(4_000.0);
            let launch = FreshenLaunch {
                plan: ctx.plan().clone(),
                issue_at: SimTime::from_millis(4_000.0 - lead_ms),
                deadline: Some(arrival),
            };
            let out = run_episode(
                &mut ctx,
                &mut n,
                Episode::invocation(Value::Int(1), arrival).with_launch(launch).with_tie_break(TieBreak::Seeded(seed)),
            );
            (out, n.requests().to_vec())
        };
        prop_assert_eq!(run(), run());
    }
}

#[test]
fn concurrent_readers_never_see_torn_records() {
    let cache = Arc::new(FreshenCache::new());
    let keys: Vec<ObjectKey> = (0..4).map(|i| ObjectKey::new("e", format!("o{i}"))).collect();
    let writers: Vec<_> = keys
        .iter()
        .cloned()
        .map(|key| {
            let cache = Arc::clone(&cache);
            std::thread::spawn(move || {
                for t in 1..=2_000u64 {
                    cache.put(key.clone(), Value::Int(t as i64), SimDuration::from_micros(1_000_000), SimTime::from_micros(t));
                }
            })
        })
        .collect();
    let readers: Vec<_> = (0..4)
        .map(|_| {
            let cache = Arc::clone(&cache);
            let keys = keys.clone();
            std::thread::spawn(move || {
                let mut last = vec![0u64; keys.len()];
                for round in 0..20_000usize {
                    let i = round % keys.len();
                    if let Some(r) = cache.peek(&keys[i]) {
                        assert_eq!(r.key, keys[i]);
                        assert_eq!(r.value, Value::Int(r.fetched_at.as_micros() as i64));
                        assert_eq!(r.version, r.fetched_at.as_micros());
                        assert!(r.version >= last[i], "version went backwards");
                        last[i] = r.version;
                    }
                }
            })
        })
        .collect();
    for h in writers.into_iter().chain(readers) {
        h.join().unwrap();
    }
}
