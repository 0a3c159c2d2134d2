//! TTL behaviour of prefetched objects: ten invocations over twenty
//! seconds with a ten-second TTL reach the store twice.

use freshen::function::{FunctionDef, Operand};
use freshen::netsim::{Location, NetConfig, NetSim, SimEndpoint};
use freshen::runtime::{RuntimeConfig, RuntimeContext};
use freshen::sim::{run_episode, Episode};
use freshen::time::SimTime;
use freshen::value::Value;

fn main() {
    let f = FunctionDef::builder("reader")
        .constant("ID", "model-weights")
        .ttl_ms(10_000.0)
        .data_get("store", None, Operand::constant("ID"))
        .compute(5.0)
        .build()
        .unwrap();
    let store = SimEndpoint::new("store", 50.0, 125_000.0, Location::Remote)
        .unwrap()
        .with_default_object_size(2_000_000);
    let mut net = NetSim::new(NetConfig::default(), [store], 0);
    let mut ctx = RuntimeContext::init(f, RuntimeConfig::default(), SimTime::ZERO).unwrap();

    let mut total = 0;
    for i in 0..10 {
        let arrival = 1_000.0 + 2_000.0 * i as f64;
        let plan = ctx.plan().clone();
        let out = run_episode(
            &mut ctx,
            &mut net,
            Episode::invocation(Value::Int(i), SimTime::from_millis(arrival)).with_freshen(plan, SimTime::from_millis(arrival - 500.0)),
        );
        total += out.upstream_fetches;
        let rec = out.record.unwrap();
        println!(
            "t={:>6} ms  fetches={}  get step {:>8.3} ms  {:?}",
            arrival,
            out.upstream_fetches,
            rec.step_durations[0].as_millis_f64(),
            rec.branches[0]
        );
    }
    let stats = ctx.cache().stats();
    println!("upstream fetches: {total}, cache hits {} misses {}", stats.hits, stats.misses);
}
