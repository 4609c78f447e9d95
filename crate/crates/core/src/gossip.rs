//! Delayed randomized gossip for network averaging.
//!
//! In oracle mode every edge owns a Poisson clock of intensity `p_ij`. At an
//! accepted tick `t` both endpoints read their values at `t - tau_ij` and
//! move by `K_ij / p_ij` times the delayed difference, in opposite
//! directions. Protocol mode schedules the same exchanges from node clocks
//! with a ping handshake, as a node-initiated implementation would.

use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;

use rand::Rng;

use crate::engine::{
    check_sample_times, exp_weight, Divergence, ExpWeighted, HistoryBuffer, PiecewiseTrajectory, Sample, Trace,
    TraceKind, DIVERGENCE_FACTOR,
};
use crate::error::{Error, Result};
use crate::network::NetworkSpec;
use crate::ppp::{clock_rng, ClockId, ClockMerger, CountSemantics, Gate};

/// How exchanges are scheduled.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum ProtocolConfig {
    /// Edge clocks, reads at `t - tau_ij`.
    #[default]
    Oracle,
    /// Node clocks of rate `sum_j p_ij / 2` with a ping handshake; the ping
    /// delay of each edge must not exceed its communication delay.
    Protocol { tau_ping: Vec<f64> },
}

impl ProtocolConfig {
    pub fn validate(&self, net: &NetworkSpec) -> Result<()> {
        if let ProtocolConfig::Protocol { tau_ping } = self {
            if tau_ping.len() != net.edge_count() {
                return Err(Error::config(format!(
                    "tau_ping has {} entries for {} edges",
                    tau_ping.len(),
                    net.edge_count()
                )));
            }
            for (e, (&tp, &t)) in tau_ping.iter().zip(&net.delays.comm).enumerate() {
                if !(tp >= 0.0 && tp <= t) {
                    return Err(Error::config(format!("edge {e}: ping delay {tp} must lie in [0, tau = {t}]")));
                }
            }
        }
        Ok(())
    }

    /// Delay between the snapshot and the update of each edge.
    pub fn effective_delays(&self, net: &NetworkSpec) -> Vec<f64> {
        match self {
            ProtocolConfig::Oracle => net.delays.comm.clone(),
            ProtocolConfig::Protocol { tau_ping } => {
                net.delays.comm.iter().zip(tau_ping).map(|(t, p)| t + 2.0 * p).collect()
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct GossipOptions {
    pub horizon: f64,
    pub sample_times: Vec<f64>,
    pub protocol: ProtocolConfig,
    /// Rate of the exponentially weighted averages; enables `ewa_err2` and
    /// `weighted_ratio`.
    pub gamma: Option<f64>,
    pub semantics: CountSemantics,
    /// Stop after this many clock ticks.
    pub max_events: Option<u64>,
    pub record_trajectory: bool,
    pub prune: bool,
}

impl GossipOptions {
    pub fn new(horizon: f64, sample_times: Vec<f64>) -> Self {
        GossipOptions {
            horizon,
            sample_times,
            protocol: ProtocolConfig::Oracle,
            gamma: None,
            semantics: CountSemantics::Accepted,
            max_events: None,
            record_trajectory: false,
            prune: true,
        }
    }
}

/// Tracks the squared error of an output map `scale * x` against a
/// replicated target, its exponentially weighted average, and the weighted
/// error integral, updated one node at a time.
#[derive(Debug, Clone)]
pub(crate) struct Monitor {
    d: usize,
    scale: f64,
    target: Vec<f64>,
    current: Vec<f64>,
    node_err: Vec<f64>,
    err2: f64,
    err0: f64,
    ewa: Option<Vec<ExpWeighted>>,
    err_int: Option<ExpWeighted>,
    gamma: Option<f64>,
    pub(crate) trajectory: Option<PiecewiseTrajectory>,
}

impl Monitor {
    pub(crate) fn new(x0: &[Vec<f64>], target: &[f64], scale: f64, gamma: Option<f64>, record: bool) -> Self {
        let d = target.len();
        let current: Vec<f64> = x0.iter().flatten().copied().collect();
        let node_err: Vec<f64> = x0.iter().map(|x| node_error(x, target, scale)).collect();
        let err2 = node_err.iter().sum();
        Monitor {
            d,
            scale,
            target: target.to_vec(),
            trajectory: record.then(|| PiecewiseTrajectory::start(current.clone())),
            current,
            node_err,
            err2,
            err0: err2,
            ewa: gamma.map(|g| (0..x0.len()).map(|_| ExpWeighted::new(g, d)).collect()),
            err_int: gamma.map(|g| ExpWeighted::new(g, 1)),
            gamma,
        }
    }

    pub(crate) fn update(&mut self, t: f64, i: usize, value: &[f64]) -> Result<()> {
        let d = self.d;
        if let Some(ewa) = &mut self.ewa {
            ewa[i].advance(t, &self.current[i * d..(i + 1) * d]);
        }
        if let Some(int) = &mut self.err_int {
            int.advance(t, &[self.err2]);
        }
        self.current[i * d..(i + 1) * d].copy_from_slice(value);
        self.node_err[i] = node_error(value, &self.target, self.scale);
        self.err2 = self.node_err.iter().sum();
        if let Some(traj) = &mut self.trajectory {
            traj.jump(t, self.current.clone())?;
        }
        Ok(())
    }

    pub(crate) fn divergence(&self) -> Option<&'static str> {
        if !self.err2.is_finite() {
            Some("non-finite state")
        } else if self.err0 > 0.0 && self.err2 > DIVERGENCE_FACTOR * self.err0 {
            Some("squared error exceeded 1e12 times its initial value")
        } else {
            None
        }
    }

    pub(crate) fn sample(&self, t: f64) -> Sample {
        let d = self.d;
        let ewa_err2 = self.ewa.as_ref().map(|ewa| {
            ewa.iter()
                .enumerate()
                .map(|(i, w)| node_error(&w.average_at(t, &self.current[i * d..(i + 1) * d]), &self.target, self.scale))
                .sum()
        });
        let weighted_ratio = match (&self.err_int, self.gamma) {
            (Some(int), Some(g)) if self.err0 > 0.0 && t > 0.0 => {
                Some(int.integral_at(t, &[self.err2])[0] / (self.err0 * exp_weight(g, t)))
            }
            (Some(_), Some(_)) if self.err0 > 0.0 => Some(1.0),
            _ => None,
        };
        Sample { time: t, err2: self.err2, ewa_err2, weighted_ratio, ..Sample::default() }
    }
}

fn node_error(x: &[f64], target: &[f64], scale: f64) -> f64 {
    x.iter().zip(target).map(|(x, c)| (scale * x - c).powi(2)).sum()
}

/// Relative deviation of a vector sum from its initial value. Falls back to
/// the total absolute mass when the initial sum vanishes.
pub(crate) fn relative_drift(sum: &[f64], sum0: &[f64], scale0: f64) -> f64 {
    let diff: f64 = sum.iter().zip(sum0).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let norm: f64 = sum0.iter().map(|v| v * v).sum::<f64>().sqrt();
    let denom = if norm > 0.0 { norm } else if scale0 > 0.0 { scale0 } else { 1.0 };
    diff / denom
}

pub(crate) fn validate_state(n: usize, x0: &[Vec<f64>]) -> Result<usize> {
    if x0.len() != n {
        return Err(Error::config(format!("initial state has {} nodes, graph has {n}", x0.len())));
    }
    let d = x0[0].len();
    if d == 0 || x0.iter().any(|x| x.len() != d) {
        return Err(Error::config("initial vectors must share a positive dimension"));
    }
    if x0.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::invalid("initial state must be finite"));
    }
    Ok(d)
}

/// Componentwise average of the node vectors.
pub fn average(x0: &[Vec<f64>]) -> Vec<f64> {
    let n = x0.len() as f64;
    let mut avg = vec![0.0; x0[0].len()];
    for x in x0 {
        for (a, v) in avg.iter_mut().zip(x) {
            *a += v / n;
        }
    }
    avg
}

struct Sim<'a> {
    net: &'a NetworkSpec,
    coef: Vec<f64>,
    buffers: Vec<HistoryBuffer>,
    monitor: Monitor,
    trace: Trace,
    samples: Vec<f64>,
    next_sample: usize,
    sum0: Vec<f64>,
    mass0: f64,
    energy: f64,
    prune_margin: f64,
    prune: bool,
}

impl Sim<'_> {
    fn flush_samples_before(&mut self, t: f64) {
        while self.next_sample < self.samples.len() && self.samples[self.next_sample] < t {
            self.record(self.samples[self.next_sample]);
            self.next_sample += 1;
        }
    }

    fn flush_samples_until(&mut self, t: f64) {
        while self.next_sample < self.samples.len() && self.samples[self.next_sample] <= t {
            self.record(self.samples[self.next_sample]);
            self.next_sample += 1;
        }
    }

    fn record(&mut self, t: f64) {
        let d = self.sum0.len();
        let mut sum = vec![0.0; d];
        for b in &self.buffers {
            for (s, v) in sum.iter_mut().zip(b.current()) {
                *s += v;
            }
        }
        let mut sample = self.monitor.sample(t);
        sample.energy = self.energy;
        sample.updates_attempted = self.trace.events_attempted;
        sample.updates_accepted = self.trace.events_accepted;
        sample.conserved_audit = Some(relative_drift(&sum, &self.sum0, self.mass0));
        self.trace.samples.push(sample);
    }

    /// Applies one exchange with reads `xi_hat`, `xj_hat`; returns false on
    /// divergence.
    fn exchange(&mut self, t: f64, e: usize, xi_hat: &[f64], xj_hat: &[f64]) -> Result<bool> {
        let edge = self.net.graph.edge(e);
        let c = self.coef[e];
        let new_i: Vec<f64> =
            self.buffers[edge.a].current().iter().zip(xi_hat.iter().zip(xj_hat)).map(|(x, (a, b))| x - c * (a - b)).collect();
        let new_j: Vec<f64> =
            self.buffers[edge.b].current().iter().zip(xi_hat.iter().zip(xj_hat)).map(|(x, (a, b))| x - c * (b - a)).collect();
        self.buffers[edge.a].push(t, &new_i)?;
        self.buffers[edge.b].push(t, &new_j)?;
        self.monitor.update(t, edge.a, &new_i)?;
        self.monitor.update(t, edge.b, &new_j)?;
        self.trace.events_accepted += 1;
        self.trace.state_changes += 1;
        self.energy += self.net.delays.comm[e];
        if self.prune && self.trace.state_changes.is_multiple_of(512) {
            let h = t - self.prune_margin;
            for b in &mut self.buffers {
                b.prune(h);
            }
        }
        if let Some(reason) = self.monitor.divergence() {
            self.trace.divergence = Some(Divergence { time: t, reason: reason.into() });
            return Ok(false);
        }
        Ok(true)
    }

    /// `stop = Some(t)` ends the run just before `t`; `None` runs to the
    /// horizon inclusive.
    fn finish(mut self, stop: Option<f64>, horizon: f64) -> Trace {
        if self.trace.divergence.is_none() {
            match stop {
                Some(t) => self.flush_samples_before(t),
                None => self.flush_samples_until(horizon),
            }
        }
        self.trace.trajectory = self.monitor.trajectory.take();
        self.trace
    }
}

/// Runs delayed randomized gossip with step sizes `k` from `x0`.
pub fn run_gossip(net: &NetworkSpec, k: &[f64], x0: &[Vec<f64>], opts: &GossipOptions, seed: u64) -> Result<Trace> {
    let (n, m) = (net.node_count(), net.edge_count());
    let d = validate_state(n, x0)?;
    if k.len() != m {
        return Err(Error::config(format!("{} step sizes for {m} edges", k.len())));
    }
    if let Some(bad) = k.iter().find(|k| !(**k > 0.0 && k.is_finite())) {
        return Err(Error::invalid(format!("step sizes must be positive, got {bad}")));
    }
    if let Some(bad) = net.intensities.edge.iter().find(|p| !(**p > 0.0)) {
        return Err(Error::invalid(format!("edge intensities must be positive, got {bad}")));
    }
    if let Some(g) = opts.gamma {
        if !(g > 0.0) {
            return Err(Error::invalid(format!("gamma must be positive, got {g}")));
        }
    }
    opts.protocol.validate(net)?;
    let samples = check_sample_times(&opts.sample_times, opts.horizon)?;
    let target = average(x0);
    let mut sum0 = vec![0.0; d];
    for x in x0 {
        for (s, v) in sum0.iter_mut().zip(x) {
            *s += v;
        }
    }
    let mass0 = x0.iter().flatten().map(|v| v.abs()).sum();
    let eff = opts.protocol.effective_delays(net);
    let max_delay = eff.iter().copied().fold(0.0, f64::max);
    let mean_gap = 1.0 / net.intensities.total_edge_rate();
    let mut sim = Sim {
        net,
        coef: k.iter().zip(&net.intensities.edge).map(|(k, p)| k / p).collect(),
        buffers: x0.iter().map(|x| HistoryBuffer::new(x)).collect(),
        monitor: Monitor::new(x0, &target, 1.0, opts.gamma, opts.record_trajectory),
        trace: Trace::new(TraceKind::Gossip),
        samples,
        next_sample: 0,
        sum0,
        mass0,
        energy: 0.0,
        prune_margin: 2.0 * (max_delay + mean_gap),
        prune: opts.prune,
    };
    let stop = match &opts.protocol {
        ProtocolConfig::Oracle => run_oracle(&mut sim, opts, seed)?,
        ProtocolConfig::Protocol { tau_ping } => run_protocol(&mut sim, tau_ping, opts, seed)?,
    };
    Ok(sim.finish(stop, opts.horizon))
}

fn run_oracle(sim: &mut Sim<'_>, opts: &GossipOptions, seed: u64) -> Result<Option<f64>> {
    let net = sim.net;
    let clocks: Vec<(ClockId, f64)> =
        net.intensities.edge.iter().enumerate().map(|(e, &p)| (ClockId::Edge(e), p)).collect();
    let mut gate = Gate::new(&net.graph, &net.delays, &net.caps, opts.semantics);
    let mut xi_hat = Vec::new();
    let mut xj_hat = Vec::new();
    for ev in ClockMerger::new(seed, &clocks, opts.horizon)? {
        if opts.max_events.is_some_and(|cap| sim.trace.events_attempted >= cap) {
            return Ok(Some(ev.time));
        }
        sim.flush_samples_before(ev.time);
        let decision = gate.decide(&ev)?;
        sim.trace.events_attempted += 1;
        if !decision.accepted {
            continue;
        }
        let ClockId::Edge(e) = ev.clock else { unreachable!("only edge clocks are merged") };
        let edge = net.graph.edge(e);
        let s = ev.time - net.delays.comm[e];
        xi_hat.clear();
        xi_hat.extend_from_slice(sim.buffers[edge.a].read(s)?);
        xj_hat.clear();
        xj_hat.extend_from_slice(sim.buffers[edge.b].read(s)?);
        if !sim.exchange(ev.time, e, &xi_hat, &xj_hat)? {
            return Ok(Some(ev.time));
        }
    }
    Ok(None)
}

#[derive(Debug, Clone)]
enum Step {
    /// The ping from `i` reaches `j`.
    Arrive { id: u64 },
    /// The ping is back at `i`; the edge constraint is checked.
    Sync { id: u64 },
    /// The exchange lands.
    Update { e: usize, xi: Vec<f64>, xj: Vec<f64> },
}

struct Queued {
    time: f64,
    seq: u64,
    step: Step,
}

impl PartialEq for Queued {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Queued {}

impl Ord for Queued {
    fn cmp(&self, other: &Self) -> Ordering {
        self.time.total_cmp(&other.time).then(self.seq.cmp(&other.seq))
    }
}

impl PartialOrd for Queued {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Handshake in flight.
#[derive(Debug, Clone, Copy)]
struct Handshake {
    e: usize,
    i: usize,
    j: usize,
    start: f64,
}

/// Request list entry of one node: a communication it takes part in,
/// tentative until the handshake completes.
#[derive(Debug, Clone, Copy)]
struct Request {
    start: f64,
    id: u64,
}

fn window_load(list: &mut Vec<Request>, t: f64, tau: f64) -> usize {
    list.retain(|r| r.start >= t - tau || r.start > t);
    list.iter().filter(|r| r.start <= t).count()
}

fn run_protocol(sim: &mut Sim<'_>, tau_ping: &[f64], opts: &GossipOptions, seed: u64) -> Result<Option<f64>> {
    const CHOICE_SALT: u64 = 0x6a09_e667_f3bc_c909;
    let net = sim.net;
    let g = &net.graph;
    let n = g.node_count();
    let rate: Vec<f64> = (0..n).map(|i| g.incident(i).iter().map(|&e| net.intensities.edge[e]).sum::<f64>()).collect();
    let clocks: Vec<(ClockId, f64)> = (0..n).map(|i| (ClockId::Node(i), rate[i] / 2.0)).collect();
    let mut choice_rng: Vec<_> = (0..n).map(|i| clock_rng(seed ^ CHOICE_SALT, ClockId::Node(i))).collect();
    let caps = &net.caps;
    let bounded = !caps.is_unbounded();

    let mut ticks = ClockMerger::new(seed, &clocks, opts.horizon)?.peekable();
    let mut queue: BinaryHeap<Reverse<Queued>> = BinaryHeap::new();
    let mut seq = 0u64;
    let mut handshakes: Vec<Option<Handshake>> = Vec::new();
    let mut requests: Vec<Vec<Request>> = vec![Vec::new(); n];
    let mut edge_starts: Vec<Vec<Request>> = vec![Vec::new(); g.edge_count()];

    loop {
        let tick_time = ticks.peek().map(|e| e.time);
        let queued_time = queue.peek().map(|q| q.0.time);
        let take_queue = match (tick_time, queued_time) {
            (None, None) => break,
            (Some(_), None) => false,
            (None, Some(_)) => true,
            (Some(a), Some(b)) => b <= a,
        };
        if take_queue {
            let Reverse(q) = queue.pop().expect("peeked");
            if q.time > opts.horizon {
                break;
            }
            sim.flush_samples_before(q.time);
            match q.step {
                Step::Arrive { id } => {
                    let h = handshakes[id as usize].expect("live handshake");
                    let cap = caps.comm[h.j];
                    let load = window_load(&mut requests[h.j], q.time, net.delays.comm_node[h.j]);
                    if bounded && cap.is_some_and(|c| load >= c as usize) {
                        requests[h.i].retain(|r| r.id != id);
                        handshakes[id as usize] = None;
                    } else {
                        if bounded {
                            requests[h.j].push(Request { start: q.time, id });
                        }
                        queue.push(Reverse(Queued { time: h.start + 2.0 * tau_ping[h.e], seq, step: Step::Sync { id } }));
                        seq += 1;
                    }
                }
                Step::Sync { id } => {
                    let h = handshakes[id as usize].take().expect("live handshake");
                    let load = window_load(&mut edge_starts[h.e], q.time, net.delays.comm[h.e]);
                    if bounded && caps.edge[h.e].is_some_and(|c| load >= c as usize) {
                        requests[h.i].retain(|r| r.id != id);
                        requests[h.j].retain(|r| r.id != id);
                        continue;
                    }
                    if bounded {
                        edge_starts[h.e].push(Request { start: q.time, id });
                    }
                    let xi = sim.buffers[h.i].read(h.start)?.to_vec();
                    let xj = sim.buffers[h.j].read(h.start)?.to_vec();
                    let (xi, xj) = if h.i == g.edge(h.e).a { (xi, xj) } else { (xj, xi) };
                    queue.push(Reverse(Queued {
                        time: q.time + net.delays.comm[h.e],
                        seq,
                        step: Step::Update { e: h.e, xi, xj },
                    }));
                    seq += 1;
                }
                Step::Update { e, xi, xj } => {
                    if !sim.exchange(q.time, e, &xi, &xj)? {
                        return Ok(Some(q.time));
                    }
                }
            }
            continue;
        }
        let ev = ticks.next().expect("peeked");
        if opts.max_events.is_some_and(|cap| sim.trace.events_attempted >= cap) {
            return Ok(Some(ev.time));
        }
        sim.flush_samples_before(ev.time);
        sim.trace.events_attempted += 1;
        let ClockId::Node(i) = ev.clock else { unreachable!("only node clocks are merged") };
        if bounded {
            let load = window_load(&mut requests[i], ev.time, net.delays.comm_node[i]);
            if caps.comm[i].is_some_and(|c| load >= c as usize) {
                continue;
            }
        }
        let incident = g.incident(i);
        let mut u = choice_rng[i].random::<f64>() * rate[i];
        let mut e = *incident.last().expect("connected graph has no isolated node");
        for &f in incident {
            u -= net.intensities.edge[f];
            if u < 0.0 {
                e = f;
                break;
            }
        }
        let edge = g.edge(e);
        let j = if edge.a == i { edge.b } else { edge.a };
        let id = handshakes.len() as u64;
        handshakes.push(Some(Handshake { e, i, j, start: ev.time }));
        if bounded {
            requests[i].push(Request { start: ev.time, id });
        }
        queue.push(Reverse(Queued { time: ev.time + tau_ping[e], seq, step: Step::Arrive { id } }));
        seq += 1;
    }
    Ok(None)
}

/// Exponentially weighted averages of the recorded trajectory at every
/// sample time.
pub fn ewa(trace: &Trace, gamma: f64) -> Result<Vec<(f64, Vec<f64>)>> {
    let traj = trace
        .trajectory
        .as_ref()
        .ok_or_else(|| Error::invalid("trace was recorded without its trajectory"))?;
    trace.samples.iter().map(|s| Ok((s.time, traj.ewa(gamma, s.time)?))).collect()
}

/// `(time, ||x_t - xbar||^2)` at every sample.
pub fn consensus_error(trace: &Trace) -> Vec<(f64, f64)> {
    trace.samples.iter().map(|s| (s.time, s.err2)).collect()
}
