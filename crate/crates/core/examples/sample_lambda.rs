//! The sample function end to end: infer its freshen plan, then run one
//! invocation cold and one after freshen had time to finish.

use freshen::freshen::FreshenMode;
use freshen::function::sample_lambda;
use freshen::netsim::{Location, NetConfig, NetSim, SimEndpoint};
use freshen::runtime::{RuntimeConfig, RuntimeContext};
use freshen::sim::{run_episode, Episode};
use freshen::time::{SimDuration, SimTime};
use freshen::value::Value;

fn steps(d: &[SimDuration]) -> String {
    d.iter().map(|s| s.to_string()).collect::<Vec<_>>().join(", ")
}

fn main() {
    let f = sample_lambda("store", 20.0, 1_000_000);
    let store = SimEndpoint::new("store", 40.0, 125_000.0, Location::Remote)
        .unwrap()
        .with_default_object_size(1_000_000);
    let mut net = NetSim::new(NetConfig::default(), [store], 1);
    let config = RuntimeConfig {
        default_ttl: SimDuration::from_millis(10_000.0),
        ..RuntimeConfig::default()
    };
    let mut ctx = RuntimeContext::init(f, config, SimTime::ZERO).unwrap();
    println!("freshen plan: {:?}", ctx.plan().shape());

    let cold = run_episode(&mut ctx, &mut net, Episode::invocation(Value::Int(1), SimTime::ZERO).with_mode(FreshenMode::Disabled));
    let rec = cold.record.unwrap();
    println!("without freshen: {} (steps {})", rec.duration(), steps(&rec.step_durations));

    let issue = SimTime::from_millis(5_600.0);
    let arrival = SimTime::from_millis(6_000.0);
    let plan = ctx.plan().clone();
    let warm = run_episode(&mut ctx, &mut net, Episode::invocation(Value::Int(1), arrival).with_freshen(plan, issue));
    let rec = warm.record.unwrap();
    println!("after freshen:   {} (steps {})", rec.duration(), steps(&rec.step_durations));
    println!("branches: {:?}", rec.branches);
    println!("same result: {}", cold.result == warm.result);
}
