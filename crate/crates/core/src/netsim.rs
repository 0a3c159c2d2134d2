//! Deterministic TCP connection model.
//!
//! Connections are modeled at round granularity: each round trip the sender
//! emits `min(cwnd * mss, bandwidth * rtt)` bytes, then the window grows
//! (doubling below `ssthresh`, one segment per round above it). Idle
//! connections lose half their window per retransmission timeout down to the
//! initial window. `warm_cwnd` raises the window of an established connection
//! from an estimate of the path's bandwidth-delay product.
//!
//! Every operation takes the current simulated time and returns the time it
//! completes; nothing here sleeps. Each request is appended to a log so tests
//! can count exactly what went over the (simulated) wire and on whose behalf.

use std::collections::BTreeMap;
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::time::{SimDuration, SimTime};
use crate::value::{digest_strs, Blob, EndpointId, ObjectKey, Value};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Location {
    Local,
    Edge,
    Remote,
}

impl Location {
    pub fn as_str(self) -> &'static str {
        match self {
            Location::Local => "local",
            Location::Edge => "edge",
            Location::Remote => "remote",
        }
    }
}

impl std::str::FromStr for Location {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "local" => Ok(Location::Local),
            "edge" => Ok(Location::Edge),
            "remote" => Ok(Location::Remote),
            other => Err(format!("unknown location `{other}` (expected local, edge or remote)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimEndpoint {
    pub id: EndpointId,
    pub rtt: SimDuration,
    /// Bottleneck bandwidth in bytes per millisecond.
    pub bandwidth: f64,
    pub location: Location,
    /// Relative error bound of packet-pair estimates, e.g. `0.1` for ±10%.
    pub packet_pair_jitter: f64,
    /// Connections need one extra round trip for a TLS-style handshake.
    pub tls: bool,
    /// Intervals `[from, to)` during which the endpoint does not answer.
    pub down: Vec<(SimTime, SimTime)>,
    /// Instants at which every connection established earlier is reset.
    pub connection_kills: Vec<SimTime>,
    /// Object sizes in bytes.
    pub objects: BTreeMap<String, u64>,
    pub default_object_size: u64,
}

impl SimEndpoint {
    pub fn new(id: impl Into<EndpointId>, rtt_ms: f64, bandwidth: f64, location: Location) -> Result<Self, NetError> {
        let id = id.into();
        let rtt = SimDuration::from_millis(rtt_ms);
        if rtt.is_zero() || !(bandwidth > 0.0 && bandwidth.is_finite()) {
            return Err(NetError::InvalidEndpoint {
                endpoint: id,
                reason: format!("rtt ({rtt_ms} ms) and bandwidth ({bandwidth} B/ms) must be positive"),
            });
        }
        Ok(Self {
            id,
            rtt,
            bandwidth,
            location,
            packet_pair_jitter: 0.0,
            tls: false,
            down: Vec::new(),
            connection_kills: Vec::new(),
            objects: BTreeMap::new(),
            default_object_size: 0,
        })
    }

    pub fn with_object(mut self, object: impl Into<String>, size: u64) -> Self {
        self.objects.insert(object.into(), size);
        self
    }

    pub fn with_default_object_size(mut self, size: u64) -> Self {
        self.default_object_size = size;
        self
    }

    pub fn with_jitter(mut self, jitter: f64) -> Self {
        self.packet_pair_jitter = jitter;
        self
    }

    pub fn with_down(mut self, from: SimTime, to: SimTime) -> Self {
        self.down.push((from, to));
        self
    }

    pub fn with_connection_kill(mut self, at: SimTime) -> Self {
        self.connection_kills.push(at);
        self
    }

    pub fn is_up(&self, t: SimTime) -> bool {
        !self.down.iter().any(|&(from, to)| from <= t && t < to)
    }

    /// Bandwidth-delay product in bytes.
    pub fn bdp_bytes(&self) -> f64 {
        self.bandwidth * self.rtt.as_millis_f64()
    }

    pub fn object_size(&self, object: &str) -> u64 {
        self.objects.get(object).copied().unwrap_or(self.default_object_size)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetConfig {
    /// Initial congestion window, in segments.
    pub initial_window: u32,
    pub mss: u32,
    pub initial_ssthresh: u32,
    /// Ceiling on cwnd growth (receive-window stand-in), in segments.
    pub max_cwnd: u32,
    pub min_rto: SimDuration,
    /// Idle time after which a warm action probes liveness before reuse.
    pub keepalive_interval: SimDuration,
    /// How far back the connection-history estimator looks.
    pub history_horizon: SimDuration,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            initial_window: 10,
            mss: 1460,
            initial_ssthresh: u32::MAX,
            max_cwnd: 4096,
            min_rto: SimDuration::from_millis(200.0),
            keepalive_interval: SimDuration::from_millis(10_000.0),
            history_horizon: SimDuration::from_millis(60_000.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConnection {
    pub endpoint: EndpointId,
    pub established: bool,
    pub established_at: SimTime,
    /// Congestion window in segments.
    pub cwnd: u32,
    pub ssthresh: u32,
    pub mss: u32,
    pub initial_window: u32,
    pub last_activity: SimTime,
    pub alive: bool,
    pub keepalive_interval: SimDuration,
}

impl SimConnection {
    pub fn idle_for(&self, now: SimTime) -> SimDuration {
        now.since(self.last_activity)
    }

    pub fn window_bytes(&self) -> u64 {
        u64::from(self.cwnd) * u64::from(self.mss)
    }

    pub fn is_usable(&self) -> bool {
        self.established && self.alive
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Estimator {
    PacketPair,
    RecentHistory,
}

impl std::str::FromStr for Estimator {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "packet-pair" => Ok(Estimator::PacketPair),
            "recent-history" | "history" => Ok(Estimator::RecentHistory),
            other => Err(format!(
                "unknown estimator `{other}` (expected packet-pair or recent-history)"
            )),
        }
    }
}

/// Provider-side permission and bounds for `warm_cwnd`.
#[derive(Debug, Clone, PartialEq)]
pub struct WarmPolicy {
    pub enabled: bool,
    pub cwnd_cap: u32,
    pub estimator: Estimator,
}

impl Default for WarmPolicy {
    fn default() -> Self {
        Self {
            enabled: true,
            cwnd_cap: NetConfig::default().max_cwnd,
            estimator: Estimator::PacketPair,
        }
    }
}

/// On whose behalf a request went out.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Origin {
    Invocation,
    Freshen,
    Harness,
}

/// Identifies one claim of one fr_state entry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct EntryTag {
    pub index: usize,
    pub epoch: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct RequestTag {
    pub origin: Origin,
    pub function: Option<String>,
    pub entry: Option<EntryTag>,
}

impl RequestTag {
    pub fn new(origin: Origin) -> Self {
        Self {
            origin,
            function: None,
            entry: None,
        }
    }

    pub fn for_function(mut self, f: &str) -> Self {
        self.function = Some(f.to_owned());
        self
    }

    pub fn with_entry(mut self, entry: EntryTag) -> Self {
        self.entry = Some(entry);
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum RequestKind {
    Connect,
    Transfer {
        bytes: u64,
        rounds: u64,
        start_cwnd: u32,
        end_cwnd: u32,
    },
    KeepAlive,
    PacketPair,
    WarmCwnd {
        from: u32,
        to: u32,
    },
}

impl RequestKind {
    pub fn name(&self) -> &'static str {
        match self {
            RequestKind::Connect => "connect",
            RequestKind::Transfer { .. } => "transfer",
            RequestKind::KeepAlive => "keepalive",
            RequestKind::PacketPair => "packet-pair",
            RequestKind::WarmCwnd { .. } => "warm-cwnd",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RequestLog {
    pub at: SimTime,
    pub done_at: SimTime,
    pub endpoint: EndpointId,
    pub kind: RequestKind,
    pub tag: RequestTag,
    pub ok: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum NetError {
    #[error("unknown endpoint `{0}`")]
    UnknownEndpoint(EndpointId),
    #[error("invalid endpoint `{endpoint}`: {reason}")]
    InvalidEndpoint { endpoint: EndpointId, reason: String },
    #[error("connection to `{endpoint}` refused at {at}")]
    ConnectionRefused { endpoint: EndpointId, at: SimTime },
    #[error("connection to `{endpoint}` reset at {at}")]
    ConnectionReset { endpoint: EndpointId, at: SimTime },
    #[error("connection to `{endpoint}` is not established")]
    NotEstablished { endpoint: EndpointId, at: SimTime },
    #[error("endpoint `{endpoint}` unreachable at {at}")]
    Unreachable { endpoint: EndpointId, at: SimTime },
}

impl NetError {
    /// When the failure became visible to the caller.
    pub fn at(&self) -> Option<SimTime> {
        match self {
            NetError::ConnectionRefused { at, .. }
            | NetError::ConnectionReset { at, .. }
            | NetError::NotEstablished { at, .. }
            | NetError::Unreachable { at, .. } => Some(*at),
            NetError::UnknownEndpoint(_) | NetError::InvalidEndpoint { .. } => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WarmOutcome {
    pub cwnd: u32,
    pub done_at: SimTime,
}

/// The simulated network: topology, datastore contents and request log.
pub struct NetSim {
    config: NetConfig,
    endpoints: BTreeMap<EndpointId, SimEndpoint>,
    rng: ChaCha8Rng,
    log: Vec<RequestLog>,
    /// Last (time, cwnd) observed per endpoint.
    history: BTreeMap<EndpointId, (SimTime, u32)>,
}

impl fmt::Debug for NetSim {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("NetSim")
            .field("config", &self.config)
            .field("endpoints", &self.endpoints.keys().collect::<Vec<_>>())
            .field("requests", &self.log.len())
            .finish()
    }
}

impl NetSim {
    pub fn new(config: NetConfig, endpoints: impl IntoIterator<Item = SimEndpoint>, seed: u64) -> Self {
        Self {
            config,
            endpoints: endpoints.into_iter().map(|e| (e.id.clone(), e)).collect(),
            rng: ChaCha8Rng::seed_from_u64(seed),
            log: Vec::new(),
            history: BTreeMap::new(),
        }
    }

    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    pub fn endpoint(&self, id: &EndpointId) -> Result<&SimEndpoint, NetError> {
        self.endpoints
            .get(id)
            .ok_or_else(|| NetError::UnknownEndpoint(id.clone()))
    }

    pub fn endpoint_mut(&mut self, id: &EndpointId) -> Result<&mut SimEndpoint, NetError> {
        self.endpoints
            .get_mut(id)
            .ok_or_else(|| NetError::UnknownEndpoint(id.clone()))
    }

    pub fn endpoints(&self) -> impl Iterator<Item = &SimEndpoint> {
        self.endpoints.values()
    }

    pub fn requests(&self) -> &[RequestLog] {
        &self.log
    }

    pub fn clear_log(&mut self) {
        self.log.clear();
    }

    /// Retransmission timeout used for idle decay: `max(min_rto, 2 * rtt)`.
    pub fn rto(&self, endpoint: &EndpointId) -> Result<SimDuration, NetError> {
        let rtt = self.endpoint(endpoint)?.rtt;
        Ok(self.config.min_rto.max(rtt * 2))
    }

    /// An unestablished connection record with the configured defaults.
    pub fn closed_connection(&self, endpoint: &EndpointId) -> SimConnection {
        SimConnection {
            endpoint: endpoint.clone(),
            established: false,
            established_at: SimTime::ZERO,
            cwnd: self.config.initial_window,
            ssthresh: self.config.initial_ssthresh,
            mss: self.config.mss,
            initial_window: self.config.initial_window,
            last_activity: SimTime::ZERO,
            alive: false,
            keepalive_interval: self.config.keepalive_interval,
        }
    }

    fn record(&mut self, at: SimTime, done_at: SimTime, endpoint: &EndpointId, kind: RequestKind, tag: &RequestTag, ok: bool) {
        self.log.push(RequestLog {
            at,
            done_at,
            endpoint: endpoint.clone(),
            kind,
            tag: tag.clone(),
            ok,
        });
    }

    /// Three-way handshake, modeled as one round trip (two with TLS).
    pub fn connect(&mut self, endpoint: &EndpointId, now: SimTime, tag: &RequestTag) -> Result<SimConnection, NetError> {
        let ep = self.endpoint(endpoint)?;
        let trips = if ep.tls { 2 } else { 1 };
        let done = now + ep.rtt * trips;
        let up = ep.is_up(now);
        self.record(now, done, endpoint, RequestKind::Connect, tag, up);
        if !up {
            return Err(NetError::ConnectionRefused {
                endpoint: endpoint.clone(),
                at: done,
            });
        }
        let mut conn = self.closed_connection(endpoint);
        conn.established = true;
        conn.established_at = done;
        conn.last_activity = done;
        conn.alive = true;
        Ok(conn)
    }

    /// Applies scripted connection resets that happened by `now`.
    pub fn refresh_liveness(&self, conn: &mut SimConnection, now: SimTime) {
        if !conn.established || !conn.alive {
            return;
        }
        if let Ok(ep) = self.endpoint(&conn.endpoint) {
            if ep
                .connection_kills
                .iter()
                .any(|&k| conn.established_at < k && k <= now)
            {
                conn.alive = false;
            }
        }
    }

    /// Halves cwnd once per full RTO of idleness, never below the initial window.
    pub fn idle_decay(&self, conn: &mut SimConnection, now: SimTime) {
        if !conn.established {
            return;
        }
        let Ok(rto) = self.rto(&conn.endpoint) else {
            return;
        };
        let idle = conn.idle_for(now).as_micros();
        let periods = idle / rto.as_micros().max(1);
        if periods == 0 {
            return;
        }
        let shifted = if periods >= 32 { 0 } else { conn.cwnd >> periods };
        conn.cwnd = shifted.max(conn.initial_window);
        // the idle timer restarts after each reduction
        conn.last_activity += rto * periods;
    }

    /// Sends `size` bytes and waits for the completion acknowledgement.
    pub fn transfer(&mut self, conn: &mut SimConnection, size: u64, now: SimTime, tag: &RequestTag) -> Result<SimTime, NetError> {
        let ep = self.endpoint(&conn.endpoint)?.clone();
        if !conn.established {
            return Err(NetError::NotEstablished {
                endpoint: ep.id,
                at: now,
            });
        }
        self.refresh_liveness(conn, now);
        if !conn.alive || !ep.is_up(now) {
            conn.alive = false;
            let at = now + ep.rtt;
            self.record(
                now,
                at,
                &ep.id,
                RequestKind::Transfer {
                    bytes: size,
                    rounds: 0,
                    start_cwnd: conn.cwnd,
                    end_cwnd: conn.cwnd,
                },
                tag,
                false,
            );
            return Err(NetError::ConnectionReset { endpoint: ep.id, at });
        }
        self.idle_decay(conn, now);
        let start_cwnd = conn.cwnd;
        let plan = plan_rounds(conn, &ep, size, self.config.max_cwnd);
        let done = now + ep.rtt * plan.rounds + serialization(plan.last_round_bytes, ep.bandwidth) + ep.rtt;
        conn.cwnd = plan.end_cwnd;
        conn.last_activity = done;
        self.history.insert(ep.id.clone(), (done, conn.cwnd));
        self.record(
            now,
            done,
            &ep.id,
            RequestKind::Transfer {
                bytes: size,
                rounds: plan.rounds,
                start_cwnd,
                end_cwnd: conn.cwnd,
            },
            tag,
            true,
        );
        Ok(done)
    }

    /// One round trip; reports liveness and refreshes the activity stamp
    /// without touching cwnd.
    pub fn keepalive_probe(&mut self, conn: &mut SimConnection, now: SimTime, tag: &RequestTag) -> Result<(bool, SimTime), NetError> {
        let ep = self.endpoint(&conn.endpoint)?;
        let done = now + ep.rtt;
        let up = ep.is_up(now);
        self.refresh_liveness(conn, now);
        let alive = conn.established && conn.alive && up;
        if alive {
            self.idle_decay(conn, now);
            conn.last_activity = done;
        } else {
            conn.alive = false;
        }
        let id = conn.endpoint.clone();
        self.record(now, done, &id, RequestKind::KeepAlive, tag, alive);
        Ok((alive, done))
    }

    /// Two back-to-back segments; the dispersion of their arrivals gives the
    /// bottleneck rate. Costs one round trip.
    pub fn estimate_bandwidth_packet_pair(&mut self, endpoint: &EndpointId, now: SimTime, tag: &RequestTag) -> Result<(f64, SimTime), NetError> {
        let ep = self.endpoint(endpoint)?;
        let done = now + ep.rtt;
        let up = ep.is_up(now);
        let (bandwidth, jitter) = (ep.bandwidth, ep.packet_pair_jitter.abs());
        self.record(now, done, endpoint, RequestKind::PacketPair, tag, up);
        if !up {
            return Err(NetError::Unreachable {
                endpoint: endpoint.clone(),
                at: done,
            });
        }
        let mss = f64::from(self.config.mss);
        // measured rate = mss / gap, with the gap perturbed so the rate error
        // stays within the configured relative bound
        let error = if jitter > 0.0 {
            self.rng.random_range(-jitter..=jitter)
        } else {
            0.0
        };
        let gap_ms = mss / (bandwidth * (1.0 + error));
        Ok((mss / gap_ms, done))
    }

    /// Target window from the policy's estimator, before capping.
    fn estimate_window(&mut self, conn: &SimConnection, policy: &WarmPolicy, now: SimTime, tag: &RequestTag) -> Result<(u32, SimTime), NetError> {
        if policy.estimator == Estimator::RecentHistory {
            if let Some(&(seen, cwnd)) = self.history.get(&conn.endpoint) {
                if now.since(seen) <= self.config.history_horizon {
                    return Ok((cwnd, now));
                }
            }
        }
        let rtt_ms = self.endpoint(&conn.endpoint)?.rtt.as_millis_f64();
        let (bw, done) = self.estimate_bandwidth_packet_pair(&conn.endpoint, now, tag)?;
        let segments = (bw * rtt_ms / f64::from(conn.mss)).ceil();
        Ok((segments.min(f64::from(u32::MAX)) as u32, done))
    }

    /// Emulated `warm_cwnd`: raise cwnd toward the estimated BDP.
    ///
    /// The result is `min(estimate, cap)`, but never lower than the current
    /// window or the initial window. A disabled policy leaves the connection
    /// untouched.
    pub fn warm_cwnd(&mut self, conn: &mut SimConnection, policy: &WarmPolicy, now: SimTime, tag: &RequestTag) -> Result<WarmOutcome, NetError> {
        if !policy.enabled {
            return Ok(WarmOutcome {
                cwnd: conn.cwnd,
                done_at: now,
            });
        }
        self.refresh_liveness(conn, now);
        if !conn.is_usable() {
            return Err(NetError::NotEstablished {
                endpoint: conn.endpoint.clone(),
                at: now,
            });
        }
        self.idle_decay(conn, now);
        let (estimate, done) = self.estimate_window(conn, policy, now, tag)?;
        let from = conn.cwnd;
        let target = estimate.min(policy.cwnd_cap);
        conn.cwnd = from.max(target).max(conn.initial_window);
        conn.last_activity = done;
        self.history.insert(conn.endpoint.clone(), (done, conn.cwnd));
        let id = conn.endpoint.clone();
        self.record(now, done, &id, RequestKind::WarmCwnd { from, to: conn.cwnd }, tag, true);
        Ok(WarmOutcome {
            cwnd: conn.cwnd,
            done_at: done,
        })
    }

    /// Transfer time on a fresh connection at the initial window, without
    /// touching any state.
    pub fn cold_transfer_time(&self, endpoint: &EndpointId, size: u64) -> Result<SimDuration, NetError> {
        let ep = self.endpoint(endpoint)?;
        let mut conn = self.closed_connection(endpoint);
        conn.established = true;
        let plan = plan_rounds(&conn, ep, size, self.config.max_cwnd);
        conn.cwnd = plan.end_cwnd;
        Ok(ep.rtt * plan.rounds + serialization(plan.last_round_bytes, ep.bandwidth) + ep.rtt)
    }

    /// Stored object behind `key`. Objects are read-only, version 1.
    pub fn object(&self, key: &ObjectKey) -> Result<Blob, NetError> {
        let ep = self.endpoint(&key.endpoint)?;
        let size = ep.object_size(&key.object);
        let size_text = size.to_string();
        Ok(Blob {
            key: key.clone(),
            size,
            version: 1,
            digest: digest_strs(&[key.endpoint.as_str(), &key.object, &size_text]),
        })
    }

    /// Acknowledgement returned for a successful write.
    pub fn put_ack(&self, key: &ObjectKey, payload: &Value) -> Value {
        let payload_fp = format!("{:016x}", payload.fingerprint());
        Value::Hash(digest_strs(&["put", key.endpoint.as_str(), &key.object, &payload_fp]))
    }

    /// Opens the connection if needed, then transfers `size` bytes. A reset
    /// on an existing connection is followed by one reconnect and retry.
    pub fn request(
        &mut self,
        conns: &mut BTreeMap<EndpointId, SimConnection>,
        endpoint: &EndpointId,
        size: u64,
        now: SimTime,
        tag: &RequestTag,
    ) -> Result<SimTime, NetError> {
        let mut t = now;
        let needs_connect = conns.get(endpoint).is_none_or(|c| !c.established);
        if needs_connect {
            let conn = self.connect(endpoint, t, tag)?;
            t = conn.established_at;
            conns.insert(endpoint.clone(), conn);
        }
        let conn = conns.get_mut(endpoint).expect("connection present");
        match self.transfer(conn, size, t, tag) {
            Ok(done) => Ok(done),
            Err(NetError::ConnectionReset { at, .. }) if !needs_connect => {
                let mut fresh = self.connect(endpoint, at, tag)?;
                let start = fresh.established_at;
                let done = self.transfer(&mut fresh, size, start, tag);
                conns.insert(endpoint.clone(), fresh);
                done
            }
            Err(e) => Err(e),
        }
    }

    /// Makes sure a usable connection exists. Established connections idle
    /// for at least their keepalive interval are probed first; dead ones are
    /// re-established.
    pub fn ensure_connection(
        &mut self,
        conns: &mut BTreeMap<EndpointId, SimConnection>,
        endpoint: &EndpointId,
        now: SimTime,
        tag: &RequestTag,
    ) -> Result<SimTime, NetError> {
        let mut t = now;
        if let Some(conn) = conns.get_mut(endpoint) {
            // a reset is only discovered by sending something
            if conn.is_usable() {
                if conn.idle_for(t) < conn.keepalive_interval {
                    return Ok(t);
                }
                let (alive, done) = self.keepalive_probe(conn, t, tag)?;
                t = done;
                if alive {
                    return Ok(t);
                }
            }
        }
        let conn = self.connect(endpoint, t, tag)?;
        let done = conn.established_at;
        conns.insert(endpoint.clone(), conn);
        Ok(done)
    }

    /// Full warm of the connection to `endpoint`: establish or probe, then
    /// `warm_cwnd`. A connection that carried traffic within the last RTO
    /// has not decayed and is left alone at no cost.
    pub fn warm_endpoint(
        &mut self,
        conns: &mut BTreeMap<EndpointId, SimConnection>,
        endpoint: &EndpointId,
        policy: &WarmPolicy,
        now: SimTime,
        tag: &RequestTag,
    ) -> Result<SimTime, NetError> {
        if let Some(conn) = conns.get(endpoint) {
            if conn.is_usable() && conn.idle_for(now) < self.rto(endpoint)? {
                return Ok(now);
            }
        }
        let ready = self.ensure_connection(conns, endpoint, now, tag)?;
        let conn = conns.get_mut(endpoint).expect("connection present");
        Ok(self.warm_cwnd(conn, policy, ready, tag)?.done_at)
    }
}

struct RoundPlan {
    rounds: u64,
    last_round_bytes: u64,
    end_cwnd: u32,
}

fn grow(cwnd: u32, ssthresh: u32, max_cwnd: u32) -> u32 {
    let next = if cwnd < ssthresh {
        cwnd.saturating_mul(2).min(ssthresh.max(cwnd + 1))
    } else {
        cwnd.saturating_add(1)
    };
    next.min(max_cwnd.max(cwnd))
}

fn plan_rounds(conn: &SimConnection, ep: &SimEndpoint, size: u64, max_cwnd: u32) -> RoundPlan {
    let mss = u64::from(conn.mss);
    let pipe = (ep.bdp_bytes().floor() as u64).max(mss);
    let mut cwnd = conn.cwnd;
    let mut remaining = size;
    let mut rounds = 0u64;
    let mut last = 0u64;
    while remaining > 0 {
        let window = u64::from(cwnd) * mss;
        let per_round = window.min(pipe);
        if per_round == pipe && remaining > pipe {
            // pipe-limited: every remaining full round sends `pipe` bytes
            let full = (remaining - 1) / pipe;
            rounds += full;
            remaining -= full * pipe;
            for _ in 0..full.min(u64::from(max_cwnd) + 64) {
                let next = grow(cwnd, conn.ssthresh, max_cwnd);
                if next == cwnd {
                    break;
                }
                cwnd = next;
            }
            continue;
        }
        let send = per_round.min(remaining);
        remaining -= send;
        rounds += 1;
        last = send;
        if send == per_round {
            cwnd = grow(cwnd, conn.ssthresh, max_cwnd);
        }
    }
    RoundPlan {
        rounds,
        last_round_bytes: last,
        end_cwnd: cwnd,
    }
}

fn serialization(bytes: u64, bandwidth: f64) -> SimDuration {
    if bytes == 0 {
        return SimDuration::ZERO;
    }
    SimDuration::from_micros((bytes as f64 / bandwidth * 1000.0).ceil() as u64)
}

#[cfg(test)]
mod tests {
    use super::*;

    const MSS: u64 = 1460;

    fn tag() -> RequestTag {
        RequestTag::new(Origin::Harness)
    }

    fn edge() -> SimEndpoint {
        SimEndpoint::new("edge", 50.0, 125_000.0, Location::Edge).unwrap()
    }

    fn net(eps: Vec<SimEndpoint>) -> NetSim {
        NetSim::new(NetConfig::default(), eps, 7)
    }

    fn ms(x: f64) -> SimTime {
        SimTime::from_millis(x)
    }

    /// Independent round-by-round stepping: per round send
    /// min(cwnd*mss, bw*rtt, remaining), double while below ssthresh.
    fn oracle_transfer_ms(size: u64, mut cwnd: u64, rtt_ms: f64, bw: f64, max_cwnd: u64) -> (f64, u64) {
        let pipe = ((bw * rtt_ms).floor() as u64).max(MSS);
        let mut left = size;
        let mut rounds = 0;
        let mut last = 0;
        while left > 0 {
            let cap = (cwnd * MSS).min(pipe);
            let send = cap.min(left);
            left -= send;
            rounds += 1;
            last = send;
            if send == cap {
                cwnd = (cwnd * 2).min(max_cwnd.max(cwnd));
            }
        }
        let ser_us = if last == 0 { 0.0 } else { (last as f64 / bw * 1000.0).ceil() };
        (rounds as f64 * rtt_ms + ser_us / 1000.0 + rtt_ms, cwnd)
    }

    #[test]
    fn connect_costs_one_rtt() {
        let mut n = net(vec![edge()]);
        let c = n.connect(&"edge".into(), ms(100.0), &tag()).unwrap();
        assert_eq!(c.established_at, ms(150.0));
        assert_eq!(c.cwnd, 10);
    }

    #[test]
    fn connect_local_is_sub_millisecond() {
        let local = SimEndpoint::new("local", 0.1, 1_250_000.0, Location::Local).unwrap();
        let mut n = net(vec![local]);
        let c = n.connect(&"local".into(), ms(0.0), &tag()).unwrap();
        assert_eq!(c.established_at, SimTime::from_micros(100));
    }

    #[test]
    fn connect_to_down_endpoint_is_refused_after_one_rtt() {
        let mut n = net(vec![edge().with_down(ms(0.0), ms(1000.0))]);
        let err = n.connect(&"edge".into(), ms(10.0), &tag()).unwrap_err();
        assert_eq!(err.at(), Some(ms(60.0)));
        assert!(matches!(err, NetError::ConnectionRefused { .. }));
    }

    #[test]
    fn tls_adds_a_round_trip() {
        let mut ep = edge();
        ep.tls = true;
        let mut n = net(vec![ep]);
        let c = n.connect(&"edge".into(), ms(0.0), &tag()).unwrap();
        assert_eq!(c.established_at, ms(100.0));
    }

    #[test]
    fn invalid_endpoints_are_rejected() {
        assert!(SimEndpoint::new("x", 0.0, 1.0, Location::Local).is_err());
        assert!(SimEndpoint::new("x", 1.0, 0.0, Location::Local).is_err());
    }

    #[test]
    fn ten_segments_at_initial_window_take_one_data_round() {
        let mut n = net(vec![edge()]);
        let mut c = n.connect(&"edge".into(), ms(0.0), &tag()).unwrap();
        let start = c.established_at;
        let done = n.transfer(&mut c, 10 * MSS, start, &tag()).unwrap();
        // one data round + serialization of 14600 B at 125 kB/ms + completion ack
        let expected = 50.0 + 14600.0 / 125_000.0 + 50.0;
        assert!((done.since(start).as_millis_f64() - expected).abs() < 0.002);
        assert!(matches!(
            n.requests().last().unwrap().kind,
            RequestKind::Transfer { rounds: 1, .. }
        ));
    }

    #[test]
    fn empty_transfer_costs_one_rtt() {
        let mut n = net(vec![edge()]);
        let mut c = n.connect(&"edge".into(), ms(0.0), &tag()).unwrap();
        let done = n.transfer(&mut c, 0, ms(50.0), &tag()).unwrap();
        assert_eq!(done, ms(100.0));
    }

    #[test]
    fn transfer_matches_hand_stepped_rounds() {
        for size in [1u64, 14_600, 14_601, 100_000, 1_000_000, 10_000_000, 50_000_000] {
            let mut n = net(vec![edge()]);
            let mut c = n.connect(&"edge".into(), ms(0.0), &tag()).unwrap();
            let done = n.transfer(&mut c, size, ms(50.0), &tag()).unwrap();
            let (expected, end_cwnd) = oracle_transfer_ms(size, 10, 50.0, 125_000.0, 4096);
            let got = done.since(ms(50.0)).as_millis_f64();
            assert!((got - expected).abs() < 0.002, "size {size}: {got} vs {expected}");
            assert_eq!(u64::from(c.cwnd), end_cwnd, "size {size}");
        }
    }

    #[test]
    fn warmed_large_transfer_is_at_most_sixty_percent_of_cold() {
        let size = 10_000_000;
        let mut n = net(vec![edge()]);
        let mut cold = n.connect(&"edge".into(), ms(0.0), &tag()).unwrap();
        let cold_t = n.transfer(&mut cold, size, ms(50.0), &tag()).unwrap().since(ms(50.0));

        let mut warm = n.connect(&"edge".into(), ms(0.0), &tag()).unwrap();
        let after_big = n.transfer(&mut warm, 50_000_000, ms(50.0), &tag()).unwrap();
        let warm_t = n.transfer(&mut warm, size, after_big, &tag()).unwrap().since(after_big);
        assert!(warm_t.as_millis_f64() <= 0.6 * cold_t.as_millis_f64(), "{warm_t} vs {cold_t}");
    }

    #[test]
    fn transfer_on_killed_connection_resets() {
        let mut n = net(vec![edge().with_connection_kill(ms(500.0))]);
        let mut c = n.connect(&"edge".into(), ms(0.0), &tag()).unwrap();
        let err = n.transfer(&mut c, 100, ms(600.0), &tag()).unwrap_err();
        assert!(matches!(err, NetError::ConnectionReset { .. }));
        assert_eq!(err.at(), Some(ms(650.0)));
        assert!(!c.alive);
    }

    #[test]
    fn request_reconnects_once_after_reset() {
        let mut n = net(vec![edge().with_connection_kill(ms(500.0))]);
        let mut conns = BTreeMap::new();
        let id: EndpointId = "edge".into();
        n.request(&mut conns, &id, 0, ms(0.0), &tag()).unwrap();
        // reset observed at 650, reconnect by 700, empty transfer done at 750
        let done = n.request(&mut conns, &id, 0, ms(600.0), &tag()).unwrap();
        assert_eq!(done, ms(750.0));
        assert!(conns[&id].alive);
    }

    #[test]
    fn idle_decay_halves_per_rto_with_floor() {
        let config = NetConfig {
            initial_window: 4,
            ..NetConfig::default()
        };
        let n = NetSim::new(config, [edge()], 7);
        let mut c = n.closed_connection(&"edge".into());
        c.established = true;
        c.alive = true;
        c.cwnd = 64;
        n.idle_decay(&mut c, SimTime::ZERO);
        assert_eq!(c.cwnd, 64);
        // rto = max(200, 2*50) = 200 ms
        n.idle_decay(&mut c, ms(600.0));
        assert_eq!(c.cwnd, 64 / 8);
        let mut floor = n.closed_connection(&"edge".into());
        floor.established = true;
        n.idle_decay(&mut floor, ms(2000.0));
        assert_eq!(floor.cwnd, 4);
    }

    #[test]
    fn idle_decay_is_not_applied_twice() {
        let n = net(vec![edge()]);
        let mut c = n.closed_connection(&"edge".into());
        c.established = true;
        c.cwnd = 64;
        n.idle_decay(&mut c, ms(250.0));
        n.idle_decay(&mut c, ms(250.0));
        assert_eq!(c.cwnd, 32);
    }

    #[test]
    fn keepalive_reports_liveness() {
        let mut n = net(vec![edge().with_connection_kill(ms(300.0))]);
        let mut c = n.connect(&"edge".into(), ms(0.0), &tag()).unwrap();
        let (alive, done) = n.keepalive_probe(&mut c, ms(100.0), &tag()).unwrap();
        assert!(alive);
        assert_eq!(done, ms(150.0));
        let (alive, _) = n.keepalive_probe(&mut c, ms(400.0), &tag()).unwrap();
        assert!(!alive);
    }

    #[test]
    fn keepalive_leaves_warm_window_alone() {
        let mut n = net(vec![edge()]);
        let mut c = n.connect(&"edge".into(), ms(0.0), &tag()).unwrap();
        let w = n.warm_cwnd(&mut c, &WarmPolicy::default(), ms(50.0), &tag()).unwrap();
        let before = c.cwnd;
        let (alive, _) = n.keepalive_probe(&mut c, w.done_at + SimDuration::from_millis(20.0), &tag()).unwrap();
        assert!(alive);
        assert_eq!(c.cwnd, before);
    }

    #[test]
    fn warm_cwnd_uses_bdp_estimate_and_cap() {
        let mut n = net(vec![edge()]);
        let mut c = n.connect(&"edge".into(), ms(0.0), &tag()).unwrap();
        let policy = WarmPolicy {
            enabled: true,
            cwnd_cap: 256,
            estimator: Estimator::PacketPair,
        };
        let out = n.warm_cwnd(&mut c, &policy, ms(50.0), &tag()).unwrap();
        let bdp_segments = (125_000.0f64 * 50.0 / 1460.0).ceil() as u32;
        assert_eq!(out.cwnd, bdp_segments.min(256));
        assert_eq!(out.done_at, ms(100.0));

        let mut c2 = n.connect(&"edge".into(), ms(0.0), &tag()).unwrap();
        let uncapped = WarmPolicy {
            cwnd_cap: 100_000,
            ..policy.clone()
        };
        assert_eq!(n.warm_cwnd(&mut c2, &uncapped, ms(50.0), &tag()).unwrap().cwnd, bdp_segments);
    }

    #[test]
    fn disabled_policy_is_a_no_op() {
        let mut n = net(vec![edge()]);
        let mut c = n.connect(&"edge".into(), ms(0.0), &tag()).unwrap();
        let policy = WarmPolicy {
            enabled: false,
            ..WarmPolicy::default()
        };
        let before = n.requests().len();
        let out = n.warm_cwnd(&mut c, &policy, ms(50.0), &tag()).unwrap();
        assert_eq!(out.cwnd, 10);
        assert_eq!(out.done_at, ms(50.0));
        assert_eq!(n.requests().len(), before);
    }

    #[test]
    fn warming_is_monotone() {
        let mut n = net(vec![edge()]);
        let mut c = n.connect(&"edge".into(), ms(0.0), &tag()).unwrap();
        c.cwnd = 3000;
        let policy = WarmPolicy {
            cwnd_cap: 256,
            ..WarmPolicy::default()
        };
        assert_eq!(n.warm_cwnd(&mut c, &policy, ms(50.0), &tag()).unwrap().cwnd, 3000);
    }

    #[test]
    fn history_estimator_reuses_recent_window() {
        let mut n = net(vec![edge()]);
        let mut a = n.connect(&"edge".into(), ms(0.0), &tag()).unwrap();
        let done = n.transfer(&mut a, 1_000_000, ms(50.0), &tag()).unwrap();
        let seen = a.cwnd;
        let mut b = n.connect(&"edge".into(), done, &tag()).unwrap();
        let policy = WarmPolicy {
            estimator: Estimator::RecentHistory,
            ..WarmPolicy::default()
        };
        let start = b.established_at;
        let out = n.warm_cwnd(&mut b, &policy, start, &tag()).unwrap();
        assert_eq!(out.cwnd, seen);
        assert_eq!(out.done_at, start);
    }

    #[test]
    fn packet_pair_is_exact_without_jitter() {
        let mut n = net(vec![edge()]);
        let (bw, done) = n.estimate_bandwidth_packet_pair(&"edge".into(), ms(0.0), &tag()).unwrap();
        assert!((bw - 125_000.0).abs() < 1e-6);
        assert_eq!(done, ms(50.0));
    }

    #[test]
    fn packet_pair_jitter_stays_in_bound() {
        let mut n = net(vec![edge().with_jitter(0.1)]);
        for i in 0..500 {
            let (bw, _) = n.estimate_bandwidth_packet_pair(&"edge".into(), ms(i as f64), &tag()).unwrap();
            assert!((bw / 125_000.0 - 1.0).abs() <= 0.1 + 1e-9, "{bw}");
        }
    }

    #[test]
    fn packet_pair_to_unreachable_endpoint_fails() {
        let mut n = net(vec![edge().with_down(ms(0.0), ms(100.0))]);
        assert!(matches!(
            n.estimate_bandwidth_packet_pair(&"edge".into(), ms(0.0), &tag()),
            Err(NetError::Unreachable { .. })
        ));
    }

    #[test]
    fn ensure_connection_probes_idle_and_reconnects_dead() {
        let mut n = net(vec![edge().with_connection_kill(ms(5_000.0))]);
        let id: EndpointId = "edge".into();
        let mut conns = BTreeMap::new();
        assert_eq!(n.ensure_connection(&mut conns, &id, ms(0.0), &tag()).unwrap(), ms(50.0));
        // recently active: no traffic
        assert_eq!(n.ensure_connection(&mut conns, &id, ms(60.0), &tag()).unwrap(), ms(60.0));
        // idle past keepalive interval and killed: probe (1 rtt) + reconnect (1 rtt)
        let done = n.ensure_connection(&mut conns, &id, ms(20_000.0), &tag()).unwrap();
        assert_eq!(done, ms(20_100.0));
        assert!(conns[&id].alive);
    }
}
