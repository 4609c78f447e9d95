//! Poisson clocks, truncated (capacity-gated) point processes and sliding
//! window counts.
//!
//! Every clock draws from its own ChaCha stream keyed by `(seed, clock id)`,
//! so adding or removing a clock leaves the points of all other clocks
//! unchanged.

use std::cmp::{Ordering, Reverse};
use std::collections::{BinaryHeap, VecDeque};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{DelayProfile, Graph};

/// Identity of a Poisson clock.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ClockId {
    /// Communication clock of an edge.
    Edge(usize),
    /// Computation clock of a node.
    Comp(usize),
    /// Node-initiated communication clock (ping protocol).
    Node(usize),
}

impl ClockId {
    /// Stream number used to key the RNG. Families are spaced far apart so
    /// that ids never collide for any realistic graph size.
    pub fn stream(&self) -> u64 {
        const FAMILY: u64 = 1 << 40;
        match *self {
            ClockId::Edge(k) => k as u64,
            ClockId::Comp(i) => FAMILY + i as u64,
            ClockId::Node(i) => 2 * FAMILY + i as u64,
        }
    }
}

/// Deterministic RNG for one clock.
pub fn clock_rng(seed: u64, clock: ClockId) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(clock.stream());
    rng
}

#[derive(Debug, Clone, PartialEq)]
pub struct PointStream {
    pub clock: ClockId,
    pub rate: f64,
    pub points: Vec<f64>,
}

/// Points of a homogeneous Poisson process on `[0, horizon]`: cumulative
/// sums of i.i.d. exponential gaps.
pub fn sample_ppp<R: Rng + ?Sized>(rate: f64, horizon: f64, rng: &mut R) -> Result<Vec<f64>> {
    if !(rate > 0.0 && rate.is_finite()) {
        return Err(Error::invalid(format!("Poisson rate must be positive, got {rate}")));
    }
    if !(horizon > 0.0) {
        return Err(Error::invalid(format!("horizon must be positive, got {horizon}")));
    }
    let exp = Exp::new(rate).map_err(|e| Error::invalid(e.to_string()))?;
    let mut points = Vec::with_capacity((rate * horizon * 1.1) as usize + 4);
    let mut t = 0.0;
    loop {
        t += exp.sample(rng);
        if t > horizon {
            break;
        }
        points.push(t);
    }
    Ok(points)
}

/// Samples one clock. A zero rate yields an empty stream (a clock that is
/// switched off).
pub fn sample_clock(seed: u64, clock: ClockId, rate: f64, horizon: f64) -> Result<PointStream> {
    let points = if rate == 0.0 {
        Vec::new()
    } else {
        sample_ppp(rate, horizon, &mut clock_rng(seed, clock))?
    };
    Ok(PointStream { clock, rate, points })
}

/// Number of points in the half-open window `[t - tau, t)`.
pub fn window_count(points: &[f64], t: f64, tau: f64) -> usize {
    if tau <= 0.0 {
        return 0;
    }
    let lo = points.partition_point(|&s| s < t - tau);
    let hi = points.partition_point(|&s| s < t);
    hi.saturating_sub(lo)
}

/// One point of the merged event stream.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Event {
    pub time: f64,
    pub clock: ClockId,
    /// Position of the point within its own clock.
    pub seq: usize,
}

/// Merges clocks into a single time-ordered stream; ties are broken by clock
/// id then sequence number.
pub fn merge_streams(streams: &[PointStream]) -> Vec<Event> {
    let mut events: Vec<Event> = streams
        .iter()
        .flat_map(|s| {
            s.points.iter().enumerate().map(move |(seq, &time)| Event { time, clock: s.clock, seq })
        })
        .collect();
    events.sort_by(|x, y| {
        x.time
            .total_cmp(&y.time)
            .then_with(|| x.clock.stream().cmp(&y.clock.stream()))
            .then_with(|| x.seq.cmp(&y.seq))
    });
    events
}

/// Lazily merged clocks: yields the same sequence as sampling every clock
/// with [`sample_clock`] and calling [`merge_streams`], without holding the
/// points in memory.
pub struct ClockMerger {
    clocks: Vec<(ClockId, ChaCha8Rng, Exp<f64>)>,
    heap: BinaryHeap<Reverse<Pending>>,
    horizon: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Pending {
    time: f64,
    stream: u64,
    seq: usize,
    slot: usize,
}

impl Eq for Pending {}

impl Ord for Pending {
    fn cmp(&self, other: &Self) -> Ordering {
        self.time
            .total_cmp(&other.time)
            .then_with(|| self.stream.cmp(&other.stream))
            .then_with(|| self.seq.cmp(&other.seq))
    }
}

impl PartialOrd for Pending {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl ClockMerger {
    /// Clocks with zero rate are skipped.
    pub fn new(seed: u64, clocks: &[(ClockId, f64)], horizon: f64) -> Result<Self> {
        if !(horizon > 0.0) {
            return Err(Error::invalid(format!("horizon must be positive, got {horizon}")));
        }
        let mut merger = ClockMerger { clocks: Vec::new(), heap: BinaryHeap::new(), horizon };
        for &(clock, rate) in clocks {
            if rate == 0.0 {
                continue;
            }
            if !(rate > 0.0 && rate.is_finite()) {
                return Err(Error::invalid(format!("Poisson rate must be positive, got {rate}")));
            }
            let exp = Exp::new(rate).map_err(|e| Error::invalid(e.to_string()))?;
            let slot = merger.clocks.len();
            merger.clocks.push((clock, clock_rng(seed, clock), exp));
            merger.schedule(slot, 0.0, 0);
        }
        Ok(merger)
    }

    fn schedule(&mut self, slot: usize, from: f64, seq: usize) {
        let (clock, rng, exp) = &mut self.clocks[slot];
        let time = from + exp.sample(rng);
        if time <= self.horizon {
            self.heap.push(Reverse(Pending { time, stream: clock.stream(), seq, slot }));
        }
    }
}

impl Iterator for ClockMerger {
    type Item = Event;

    fn next(&mut self) -> Option<Event> {
        let Reverse(p) = self.heap.pop()?;
        self.schedule(p.slot, p.time, p.seq + 1);
        Some(Event { time: p.time, clock: self.clocks[p.slot].0, seq: p.seq })
    }
}

/// Capacity limits; `None` means unbounded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CapacityProfile {
    pub edge: Vec<Option<u32>>,
    pub comm: Vec<Option<u32>>,
    pub comp: Vec<Option<u32>>,
}

impl CapacityProfile {
    pub fn unbounded(graph: &Graph) -> Self {
        CapacityProfile {
            edge: vec![None; graph.edge_count()],
            comm: vec![None; graph.node_count()],
            comp: vec![None; graph.node_count()],
        }
    }

    pub fn uniform(graph: &Graph, edge: Option<u32>, comm: Option<u32>, comp: Option<u32>) -> Self {
        CapacityProfile {
            edge: vec![edge; graph.edge_count()],
            comm: vec![comm; graph.node_count()],
            comp: vec![comp; graph.node_count()],
        }
    }

    pub fn is_unbounded(&self) -> bool {
        self.edge.iter().chain(&self.comm).chain(&self.comp).all(Option::is_none)
    }

    pub fn validate(&self, graph: &Graph) -> Result<()> {
        if self.edge.len() != graph.edge_count()
            || self.comm.len() != graph.node_count()
            || self.comp.len() != graph.node_count()
        {
            return Err(Error::config("capacity profile does not match the graph"));
        }
        if self.edge.iter().chain(&self.comm).chain(&self.comp).any(|q| *q == Some(0)) {
            return Err(Error::config("bounded capacities must be at least 1"));
        }
        Ok(())
    }
}

/// Which events the sliding-window counts include.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CountSemantics {
    /// Only events that were performed (accepted). Guarantees the caps.
    #[default]
    Accepted,
    /// Every point of the underlying (untruncated) process.
    Base,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Violation {
    EdgeCap(usize),
    NodeCommCap(usize),
    CompCap(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct GatingDecision {
    pub time: f64,
    pub clock: ClockId,
    pub accepted: bool,
    pub violated: Vec<Violation>,
}

/// Sliding-window counter over a monotone sequence of query times.
#[derive(Debug, Clone, Default)]
struct WindowCounter {
    times: VecDeque<f64>,
}

impl WindowCounter {
    /// Count of recorded times in `[t - tau, t]`. Points earlier than
    /// `t - tau` can never re-enter a later window and are dropped.
    fn count(&mut self, t: f64, tau: f64) -> usize {
        if tau <= 0.0 {
            return 0;
        }
        while self.times.front().is_some_and(|&s| s < t - tau) {
            self.times.pop_front();
        }
        self.times.len()
    }

    fn push(&mut self, t: f64) {
        self.times.push_back(t);
    }
}

fn under(count: usize, cap: Option<u32>) -> bool {
    cap.is_none_or(|q| count < q as usize)
}

/// Streaming form of [`gate_events`]: decides one event at a time.
#[derive(Debug, Clone)]
pub struct Gate<'a> {
    graph: &'a Graph,
    delays: &'a DelayProfile,
    caps: &'a CapacityProfile,
    semantics: CountSemantics,
    unbounded: bool,
    edge_ctr: Vec<WindowCounter>,
    comm_ctr: Vec<WindowCounter>,
    comp_ctr: Vec<WindowCounter>,
    prev: f64,
}

impl<'a> Gate<'a> {
    pub fn new(graph: &'a Graph, delays: &'a DelayProfile, caps: &'a CapacityProfile, semantics: CountSemantics) -> Self {
        Gate {
            graph,
            delays,
            caps,
            semantics,
            unbounded: caps.is_unbounded(),
            edge_ctr: vec![WindowCounter::default(); graph.edge_count()],
            comm_ctr: vec![WindowCounter::default(); graph.node_count()],
            comp_ctr: vec![WindowCounter::default(); graph.node_count()],
            prev: f64::NEG_INFINITY,
        }
    }

    pub fn decide(&mut self, ev: &Event) -> Result<GatingDecision> {
        if ev.time < self.prev {
            return Err(Error::NonMonotoneEvents { time: ev.time, previous: self.prev });
        }
        self.prev = ev.time;
        let t = ev.time;
        if self.unbounded {
            if matches!(ev.clock, ClockId::Node(_)) {
                return Err(Error::invalid("node clocks are gated by the ping protocol, not gate_events"));
            }
            return Ok(GatingDecision { time: t, clock: ev.clock, accepted: true, violated: Vec::new() });
        }
        let (delays, caps) = (self.delays, self.caps);
        let mut violated = Vec::new();
        match ev.clock {
            ClockId::Edge(k) => {
                let e = self.graph.edge(k);
                if !under(self.edge_ctr[k].count(t, delays.comm[k]), caps.edge[k]) {
                    violated.push(Violation::EdgeCap(k));
                }
                for node in [e.a, e.b] {
                    if !under(self.comm_ctr[node].count(t, delays.comm_node[node]), caps.comm[node]) {
                        violated.push(Violation::NodeCommCap(node));
                    }
                }
                let accepted = violated.is_empty();
                if accepted || self.semantics == CountSemantics::Base {
                    self.edge_ctr[k].push(t);
                    self.comm_ctr[e.a].push(t);
                    self.comm_ctr[e.b].push(t);
                }
                Ok(GatingDecision { time: t, clock: ev.clock, accepted, violated })
            }
            ClockId::Comp(i) => {
                if !under(self.comp_ctr[i].count(t, delays.comp[i]), caps.comp[i]) {
                    violated.push(Violation::CompCap(i));
                }
                let accepted = violated.is_empty();
                if accepted || self.semantics == CountSemantics::Base {
                    self.comp_ctr[i].push(t);
                }
                Ok(GatingDecision { time: t, clock: ev.clock, accepted, violated })
            }
            ClockId::Node(_) => Err(Error::invalid("node clocks are gated by the ping protocol, not gate_events")),
        }
    }
}

/// Truncates the merged clock stream against the capacity profile.
///
/// An edge event on `(i, j)` at `t` is accepted iff the edge count over
/// `[t - tau_ij, t)` and the node communication counts of `i` and `j` over
/// `[t - tau_i^comm, t)` / `[t - tau_j^comm, t)` are all below their caps; a
/// computation event at `i` iff the count over `[t - tau_i^comp, t)` is.
/// Simultaneous events already processed count against each other, so the
/// caps hold even on exact ties.
pub fn gate_events(
    graph: &Graph,
    events: &[Event],
    delays: &DelayProfile,
    caps: &CapacityProfile,
    semantics: CountSemantics,
) -> Result<Vec<GatingDecision>> {
    let mut gate = Gate::new(graph, delays, caps, semantics);
    events.iter().map(|ev| gate.decide(ev)).collect()
}

/// Largest number of points of a sorted sequence inside any half-open
/// window of length `tau`.
fn max_window_load(points: &[f64], tau: f64) -> usize {
    if tau <= 0.0 {
        return 0;
    }
    let mut best = 0;
    let mut hi = 0;
    for (lo, &start) in points.iter().enumerate() {
        if hi < lo {
            hi = lo;
        }
        while hi < points.len() && points[hi] < start + tau {
            hi += 1;
        }
        best = best.max(hi - lo);
    }
    best
}

/// Independent replay of the accepted events: every constraint whose
/// largest window load exceeds its cap is reported.
pub fn audit_capacity(
    graph: &Graph,
    decisions: &[GatingDecision],
    delays: &DelayProfile,
    caps: &CapacityProfile,
) -> Vec<Violation> {
    let mut edge_pts = vec![Vec::new(); graph.edge_count()];
    let mut comm_pts = vec![Vec::new(); graph.node_count()];
    let mut comp_pts = vec![Vec::new(); graph.node_count()];
    for d in decisions.iter().filter(|d| d.accepted) {
        match d.clock {
            ClockId::Edge(k) => {
                let e = graph.edge(k);
                edge_pts[k].push(d.time);
                comm_pts[e.a].push(d.time);
                comm_pts[e.b].push(d.time);
            }
            ClockId::Comp(i) | ClockId::Node(i) => comp_pts[i].push(d.time),
        }
    }
    let mut bad = Vec::new();
    let over = |pts: &[f64], tau: f64, cap: Option<u32>| cap.is_some_and(|q| max_window_load(pts, tau) > q as usize);
    for (k, pts) in edge_pts.iter().enumerate() {
        if over(pts, delays.comm[k], caps.edge[k]) {
            bad.push(Violation::EdgeCap(k));
        }
    }
    for i in 0..graph.node_count() {
        if over(&comm_pts[i], delays.comm_node[i], caps.comm[i]) {
            bad.push(Violation::NodeCommCap(i));
        }
        if over(&comp_pts[i], delays.comp[i], caps.comp[i]) {
            bad.push(Violation::CompCap(i));
        }
    }
    bad
}

/// Chernoff-type tail bound for a Poisson variable of mean `mu`:
/// `P(Z >= mu + x) <= exp(-x^2 / (mu + x))`.
pub fn poisson_tail_bound(mu: f64, x: f64) -> Result<f64> {
    if !(mu + x > 0.0) {
        return Err(Error::invalid(format!("poisson_tail_bound needs mu + x > 0, got {}", mu + x)));
    }
    Ok((-x * x / (mu + x)).exp())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sample_ppp_rejects_bad_rate() {
        let mut rng = clock_rng(0, ClockId::Edge(0));
        assert!(sample_ppp(0.0, 1.0, &mut rng).is_err());
        assert!(sample_ppp(-1.0, 1.0, &mut rng).is_err());
        assert!(sample_ppp(1.0, 0.0, &mut rng).is_err());
    }

    #[test]
    fn vanishing_rate_gives_no_points() {
        let s = sample_clock(3, ClockId::Edge(0), 1e-12, 1.0).unwrap();
        assert!(s.points.is_empty());
    }

    #[test]
    fn points_are_increasing_and_within_horizon() {
        let s = sample_clock(1, ClockId::Comp(2), 7.0, 50.0).unwrap();
        assert!(s.points.windows(2).all(|w| w[0] < w[1]));
        assert!(s.points.iter().all(|&t| t > 0.0 && t <= 50.0));
    }

    #[test]
    fn clocks_are_independent_of_each_other() {
        let a = sample_clock(9, ClockId::Edge(4), 2.0, 10.0).unwrap();
        let b = sample_clock(9, ClockId::Edge(4), 2.0, 10.0).unwrap();
        let other = sample_clock(9, ClockId::Edge(5), 2.0, 10.0).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.points, other.points);
    }

    #[test]
    fn window_count_examples() {
        let pts = [1.0, 2.0, 3.0];
        assert_eq!(window_count(&pts, 3.0, 2.0), 2);
        assert_eq!(window_count(&pts, 3.0, 0.0), 0);
        assert_eq!(window_count(&[0.5], 0.5, 1.0), 0);
    }

    #[test]
    fn merge_breaks_ties_by_clock_then_sequence() {
        let streams = vec![
            PointStream { clock: ClockId::Comp(0), rate: 1.0, points: vec![1.0, 2.0] },
            PointStream { clock: ClockId::Edge(3), rate: 1.0, points: vec![1.0] },
        ];
        let merged = merge_streams(&streams);
        assert_eq!(merged[0].clock, ClockId::Edge(3));
        assert_eq!(merged[1].clock, ClockId::Comp(0));
        assert_eq!(merged[2].time, 2.0);
    }

    #[test]
    fn single_edge_capacity_one() {
        let g = Graph::new(2, [(0, 1)]).unwrap();
        let d = DelayProfile::uniform(&g, 1.0).unwrap();
        let caps = CapacityProfile::uniform(&g, Some(1), None, None);
        let stream = PointStream { clock: ClockId::Edge(0), rate: 1.0, points: vec![0.1, 0.5, 2.0] };
        let decisions = gate_events(&g, &merge_streams(&[stream]), &d, &caps, CountSemantics::Accepted).unwrap();
        let accepted: Vec<bool> = decisions.iter().map(|d| d.accepted).collect();
        assert_eq!(accepted, vec![true, false, true]);
        assert_eq!(decisions[1].violated, vec![Violation::EdgeCap(0)]);
        assert!(audit_capacity(&g, &decisions, &d, &caps).is_empty());
    }

    #[test]
    fn unbounded_caps_accept_everything() {
        let g = Graph::new(3, [(0, 1), (1, 2)]).unwrap();
        let d = DelayProfile::uniform(&g, 1.0).unwrap();
        let streams: Vec<_> = (0..2).map(|k| sample_clock(5, ClockId::Edge(k), 4.0, 20.0).unwrap()).collect();
        let events = merge_streams(&streams);
        let decisions =
            gate_events(&g, &events, &d, &CapacityProfile::unbounded(&g), CountSemantics::Accepted).unwrap();
        assert_eq!(decisions.len(), events.len());
        assert!(decisions.iter().all(|d| d.accepted && d.violated.is_empty()));
        assert!(decisions.iter().zip(&events).all(|(d, e)| d.time == e.time && d.clock == e.clock));
    }

    #[test]
    fn exact_ties_still_respect_caps() {
        let g = Graph::new(2, [(0, 1)]).unwrap();
        let d = DelayProfile::uniform(&g, 1.0).unwrap();
        let caps = CapacityProfile::uniform(&g, Some(1), None, None);
        let stream = PointStream { clock: ClockId::Edge(0), rate: 1.0, points: vec![0.3, 0.3] };
        let decisions = gate_events(&g, &merge_streams(&[stream]), &d, &caps, CountSemantics::Accepted).unwrap();
        assert_eq!(decisions.iter().filter(|d| d.accepted).count(), 1);
        assert!(audit_capacity(&g, &decisions, &d, &caps).is_empty());
    }

    #[test]
    fn tail_bound_examples() {
        assert_eq!(poisson_tail_bound(3.0, 0.0).unwrap(), 1.0);
        assert!((poisson_tail_bound(1.0, 1.0).unwrap() - (-0.5f64).exp()).abs() < 1e-15);
        assert!(poisson_tail_bound(-1.0, 0.5).is_err());
    }

    #[test]
    fn max_window_load_counts_half_open_windows() {
        assert_eq!(max_window_load(&[0.0, 1.0, 2.0], 1.0), 1);
        assert_eq!(max_window_load(&[0.0, 0.5, 0.99, 2.0], 1.0), 3);
        assert_eq!(max_window_load(&[], 1.0), 0);
    }

    #[test]
    fn lazy_merger_matches_eager_sampling() {
        let clocks = [(ClockId::Edge(0), 3.0), (ClockId::Edge(1), 0.5), (ClockId::Comp(0), 2.0), (ClockId::Comp(1), 0.0)];
        let streams: Vec<PointStream> =
            clocks.iter().map(|&(c, r)| sample_clock(9, c, r, 40.0).unwrap()).collect();
        let eager = merge_streams(&streams);
        let lazy: Vec<Event> = ClockMerger::new(9, &clocks, 40.0).unwrap().collect();
        assert_eq!(eager, lazy);
        assert!(eager.len() > 100);
    }
}
