//! Connection warming on an idle edge link: transfer time with and
//! without `warm_cwnd` across payload sizes.

use freshen::netsim::{Location, NetConfig, NetSim, Origin, RequestTag, SimEndpoint, WarmPolicy};
use freshen::time::{SimDuration, SimTime};

fn main() {
    let tag = RequestTag::new(Origin::Harness);
    let id = "edge".into();
    println!("{:>10}  {:>10}  {:>10}  {:>8}", "bytes", "cold_ms", "warm_ms", "gain");
    for size in [1_000u64, 10_000, 100_000, 1_000_000, 10_000_000] {
        let mut times = [0.0; 2];
        for (i, warm) in [false, true].into_iter().enumerate() {
            let edge = SimEndpoint::new("edge", 50.0, 125_000.0, Location::Edge).unwrap();
            let mut net = NetSim::new(NetConfig::default(), [edge], 0);
            let mut conn = net.connect(&id, SimTime::ZERO, &tag).unwrap();
            let at = conn.established_at;
            // a previous upload, then five idle seconds
            let done = net.transfer(&mut conn, 5_000_000, at, &tag).unwrap();
            let mut start = done + SimDuration::from_millis(5_000.0);
            if warm {
                start = net.warm_cwnd(&mut conn, &WarmPolicy::default(), start, &tag).unwrap().done_at;
            }
            let end = net.transfer(&mut conn, size, start, &tag).unwrap();
            times[i] = end.since(start).as_millis_f64();
        }
        let gain = (times[0] - times[1]) / times[0] * 100.0;
        println!("{size:>10}  {:>10.3}  {:>10.3}  {gain:>7.1}%", times[0], times[1]);
    }
}
