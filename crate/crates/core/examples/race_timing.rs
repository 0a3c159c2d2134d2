//! Sweeps the freshen lead time against one invocation and shows which
//! wrapper branch the fetch step took.

use freshen::function::sample_lambda;
use freshen::netsim::{Location, NetConfig, NetSim, SimEndpoint};
use freshen::runtime::{RuntimeConfig, RuntimeContext};
use freshen::sim::{run_episode, Episode};
use freshen::time::{SimDuration, SimTime};
use freshen::value::Value;

fn main() {
    let arrival = 1_000.0;
    println!("{:>8}  {:>12}  branch", "lead_ms", "duration_ms");
    for lead in [-100.0, 0.0, 5.0, 20.0, 60.0, 200.0, 800.0] {
        let store = SimEndpoint::new("store", 10.0, 125_000.0, Location::Edge)
            .unwrap()
            .with_default_object_size(10_000);
        let mut net = NetSim::new(NetConfig::default(), [store], 0);
        let config = RuntimeConfig {
            default_ttl: SimDuration::from_millis(5_000.0),
            ..RuntimeConfig::default()
        };
        let mut ctx = RuntimeContext::init(sample_lambda("store", 2.0, 1_000), config, SimTime::ZERO).unwrap();
        let plan = ctx.plan().clone();
        let out = run_episode(
            &mut ctx,
            &mut net,
            Episode::invocation(Value::Int(0), SimTime::from_millis(arrival))
                .with_freshen(plan, SimTime::from_millis(arrival - lead)),
        );
        let rec = out.record.unwrap();
        println!("{lead:>8}  {:>12.3}  {:?}", rec.duration().as_millis_f64(), rec.branches[0]);
    }
}
