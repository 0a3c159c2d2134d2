//! Test-side oracles and fixtures. The oracles step the transfer model by
//! hand, one round at a time, without reusing any library arithmetic.

#![allow(dead_code)]

use std::path::PathBuf;

use freshen::scenario::Scenario;

pub const IW: u64 = 10;
pub const MSS: u64 = 1460;
/// One simulation tick in ms.
pub const TICK_MS: f64 = 0.001;

pub fn scenario(name: &str) -> Scenario {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("scenarios").join(format!("{name}.toml"));
    Scenario::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

/// Completion time in ms of a `size`-byte transfer over an established
/// connection whose window starts at `cwnd` segments: one RTT per round,
/// serialization of the final round, and one RTT for the response.
pub fn transfer_ms(rtt_ms: f64, bw: f64, size: u64, cwnd: u64) -> f64 {
    // the clock counts whole microseconds
    let rtt_ms = (rtt_ms * 1000.0).round() / 1000.0;
    let pipe = ((rtt_ms * bw).floor() as u64).max(MSS);
    let mut cwnd = cwnd;
    let mut left = size;
    let mut rounds = 0u64;
    let mut last = 0u64;
    while left > 0 {
        let cap = (cwnd * MSS).min(pipe);
        let send = cap.min(left);
        left -= send;
        rounds += 1;
        last = send;
        if send == cap {
            cwnd = (cwnd * 2).min(4096);
        }
    }
    let serialize_us = (last as f64 / bw * 1000.0).ceil();
    rounds as f64 * rtt_ms + serialize_us / 1000.0 + rtt_ms
}

/// Window in segments that covers the bandwidth-delay product.
pub fn bdp_segments(rtt_ms: f64, bw: f64) -> u64 {
    (rtt_ms * bw / MSS as f64).ceil() as u64
}

pub fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}
