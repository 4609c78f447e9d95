//! Continuized delayed block-coordinate descent.
//!
//! The state is a pure jump process: it is constant between clock ticks and
//! at an accepted tick `t` of block `k` it moves by
//! `-eta_k * grad_k G(X(t - tau_k))`, the gradient being evaluated on the
//! delayed state read from per-block [`HistoryBuffer`]s. Reads before time 0
//! return the initial state.
//!
//! The gossip and DDO simulators reuse the buffers, the trace recorder and
//! the exponentially weighted accumulators defined here.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};

/// Abort threshold: squared error (or objective gap) above this multiple of
/// its initial value.
pub const DIVERGENCE_FACTOR: f64 = 1e12;

/// Timestamped piecewise-constant trajectory of one vector-valued variable.
///
/// `read(t)` returns the latest snapshot with time `<= t`; the initial value
/// is stored at `-inf`, so reads at negative times return it.
#[derive(Debug, Clone)]
pub struct HistoryBuffer {
    dim: usize,
    times: Vec<f64>,
    values: Vec<f64>,
    start: usize,
    horizon: f64,
}

impl HistoryBuffer {
    pub fn new(initial: &[f64]) -> Self {
        HistoryBuffer {
            dim: initial.len(),
            times: vec![f64::NEG_INFINITY],
            values: initial.to_vec(),
            start: 0,
            horizon: f64::NEG_INFINITY,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Earliest time that can still be read.
    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    /// Number of retained snapshots.
    pub fn len(&self) -> usize {
        self.times.len() - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn current(&self) -> &[f64] {
        let k = self.times.len() - 1;
        &self.values[k * self.dim..(k + 1) * self.dim]
    }

    /// Records the value taken at time `t`. A second snapshot at the same
    /// time replaces the first.
    pub fn push(&mut self, t: f64, value: &[f64]) -> Result<()> {
        debug_assert_eq!(value.len(), self.dim);
        let last = *self.times.last().expect("buffer never empty");
        if t < last {
            return Err(Error::NonMonotoneEvents { time: t, previous: last });
        }
        if t == last {
            let k = self.times.len() - 1;
            self.values[k * self.dim..(k + 1) * self.dim].copy_from_slice(value);
        } else {
            self.times.push(t);
            self.values.extend_from_slice(value);
        }
        Ok(())
    }

    /// Value at time `t` (càdlàg: a snapshot taken exactly at `t` is included).
    pub fn read(&self, t: f64) -> Result<&[f64]> {
        if t < self.horizon {
            return Err(Error::HistoryUnderrun { read: t, horizon: self.horizon });
        }
        let live = &self.times[self.start..];
        let idx = self.start + live.partition_point(|&s| s <= t) - 1;
        Ok(&self.values[idx * self.dim..(idx + 1) * self.dim])
    }

    /// `read(t - tau)`.
    pub fn read_delayed(&self, t: f64, tau: f64) -> Result<&[f64]> {
        self.read(t - tau)
    }

    /// Forgets snapshots that no read at time `>= horizon` can reach.
    pub fn prune(&mut self, horizon: f64) {
        if horizon <= self.horizon {
            return;
        }
        let live = &self.times[self.start..];
        let keep = self.start + live.partition_point(|&s| s <= horizon).max(1) - 1;
        self.start = keep;
        self.horizon = horizon;
        if self.start > 64 && self.start * 2 > self.times.len() {
            self.times.drain(..self.start);
            self.values.drain(..self.start * self.dim);
            self.start = 0;
        }
    }
}

/// Running value of `int_0^t e^{gamma (s - t)} v(s) ds` for a piecewise
/// constant, vector-valued `v`.
#[derive(Debug, Clone)]
pub struct ExpWeighted {
    gamma: f64,
    last: f64,
    acc: Vec<f64>,
}

/// `int_0^dt e^{-gamma s} ds`, accurate for small `gamma * dt`.
pub fn exp_weight(gamma: f64, dt: f64) -> f64 {
    if gamma == 0.0 {
        dt
    } else {
        -(-gamma * dt).exp_m1() / gamma
    }
}

impl ExpWeighted {
    pub fn new(gamma: f64, dim: usize) -> Self {
        ExpWeighted { gamma, last: 0.0, acc: vec![0.0; dim] }
    }

    /// Integrates `value`, held constant since the last call, up to `t`.
    pub fn advance(&mut self, t: f64, value: &[f64]) {
        let dt = t - self.last;
        if dt <= 0.0 {
            return;
        }
        let decay = (-self.gamma * dt).exp();
        let w = exp_weight(self.gamma, dt);
        for (a, v) in self.acc.iter_mut().zip(value) {
            *a = decay * *a + w * v;
        }
        self.last = t;
    }

    pub fn last(&self) -> f64 {
        self.last
    }

    /// Integral up to `t >= last`, extended with the constant `current`,
    /// without mutating the accumulator.
    pub fn integral_at(&self, t: f64, current: &[f64]) -> Vec<f64> {
        let dt = (t - self.last).max(0.0);
        let decay = (-self.gamma * dt).exp();
        let w = exp_weight(self.gamma, dt);
        self.acc.iter().zip(current).map(|(a, v)| decay * a + w * v).collect()
    }

    /// Weighted average over `[0, t]`, `current` being held since `last`.
    /// At `t = 0` this is `current`.
    pub fn average_at(&self, t: f64, current: &[f64]) -> Vec<f64> {
        let w = exp_weight(self.gamma, t);
        if w <= 0.0 {
            return current.to_vec();
        }
        self.integral_at(t, current).into_iter().map(|a| a / w).collect()
    }

    pub fn integral(&self) -> &[f64] {
        &self.acc
    }

    /// Integral divided by the total weight: the exponentially weighted
    /// average of `v` over `[0, last]`.
    pub fn average(&self) -> Option<Vec<f64>> {
        let w = exp_weight(self.gamma, self.last);
        (w > 0.0).then(|| self.acc.iter().map(|a| a / w).collect())
    }
}

/// Piecewise-constant trajectory `x(t) = values[k]` on `[times[k], times[k+1])`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PiecewiseTrajectory {
    pub times: Vec<f64>,
    pub values: Vec<Vec<f64>>,
}

impl PiecewiseTrajectory {
    pub fn new(times: Vec<f64>, values: Vec<Vec<f64>>) -> Result<Self> {
        if times.is_empty() || times.len() != values.len() || times[0] != 0.0 {
            return Err(Error::invalid("trajectory needs matching times/values starting at t = 0"));
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid("trajectory times must be strictly increasing"));
        }
        Ok(PiecewiseTrajectory { times, values })
    }

    /// Starts a trajectory at `x(0) = x0`.
    pub fn start(x0: Vec<f64>) -> Self {
        PiecewiseTrajectory { times: vec![0.0], values: vec![x0] }
    }

    /// Appends a jump at `t`; a jump at the time of the last one replaces it.
    pub fn jump(&mut self, t: f64, value: Vec<f64>) -> Result<()> {
        let last = *self.times.last().expect("never empty");
        if t < last {
            return Err(Error::NonMonotoneEvents { time: t, previous: last });
        }
        if t == last {
            *self.values.last_mut().expect("never empty") = value;
        } else {
            self.times.push(t);
            self.values.push(value);
        }
        Ok(())
    }

    pub fn value_at(&self, t: f64) -> &[f64] {
        let k = self.times.partition_point(|&s| s <= t).max(1) - 1;
        &self.values[k]
    }

    /// Exponentially weighted average
    /// `gamma * int_0^t e^{gamma s} x_s ds / (e^{gamma t} - 1)`, integrated
    /// exactly segment by segment. At `t = 0` this is `x_0`.
    pub fn ewa(&self, gamma: f64, t: f64) -> Result<Vec<f64>> {
        if !(gamma > 0.0) {
            return Err(Error::invalid(format!("ewa needs gamma > 0, got {gamma}")));
        }
        if t <= 0.0 {
            return Ok(self.values[0].clone());
        }
        let mut acc = ExpWeighted::new(gamma, self.values[0].len());
        for (k, v) in self.values.iter().enumerate() {
            let end = self.times.get(k + 1).copied().unwrap_or(f64::INFINITY).min(t);
            acc.advance(end, v);
            if end >= t {
                break;
            }
        }
        Ok(acc.average().expect("t > 0"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceKind {
    Engine,
    Gossip,
    Ddo,
    Ode,
}

impl TraceKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            TraceKind::Engine => "engine",
            TraceKind::Gossip => "gossip",
            TraceKind::Ddo => "ddo",
            TraceKind::Ode => "ode",
        }
    }
}

/// Metrics recorded at one sample time.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Sample {
    pub time: f64,
    /// Squared distance to the target (consensus average, or replicated
    /// minimizer for DDO).
    pub err2: f64,
    /// Squared error of the exponentially weighted running average.
    pub ewa_err2: Option<f64>,
    pub objective_gap: Option<f64>,
    /// Cumulative sum of delay bounds over performed updates.
    pub energy: f64,
    pub updates_attempted: u64,
    pub updates_accepted: u64,
    /// Relative drift of the conserved quantity.
    pub conserved_audit: Option<f64>,
    /// `int_0^t e^{gamma s} err2 ds / int_0^t e^{gamma s} err2(0) ds`.
    pub weighted_ratio: Option<f64>,
    pub state: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Divergence {
    pub time: f64,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Trace {
    pub kind: TraceKind,
    pub samples: Vec<Sample>,
    pub divergence: Option<Divergence>,
    pub events_attempted: u64,
    pub events_accepted: u64,
    /// Number of state changes, for event-count consistency checks.
    pub state_changes: u64,
    /// Full jump trajectory of the flattened state, when requested.
    pub trajectory: Option<PiecewiseTrajectory>,
}

impl Trace {
    pub fn new(kind: TraceKind) -> Self {
        Trace {
            kind,
            samples: Vec::new(),
            divergence: None,
            events_attempted: 0,
            events_accepted: 0,
            state_changes: 0,
            trajectory: None,
        }
    }

    pub fn diverged(&self) -> bool {
        self.divergence.is_some()
    }

    pub fn last(&self) -> Option<&Sample> {
        self.samples.last()
    }
}

/// Validates and sorts requested sample times.
pub fn check_sample_times(sample_times: &[f64], horizon: f64) -> Result<Vec<f64>> {
    if let Some(t) = sample_times.iter().find(|t| !(**t >= 0.0 && **t <= horizon)) {
        return Err(Error::invalid(format!("sample time {t} outside [0, {horizon}]")));
    }
    let mut out = sample_times.to_vec();
    out.sort_by(f64::total_cmp);
    Ok(out)
}

/// `count` evenly spaced times on `[0, horizon]`, both ends included.
pub fn uniform_samples(horizon: f64, count: usize) -> Vec<f64> {
    if count < 2 {
        return vec![horizon];
    }
    (0..count).map(|k| horizon * k as f64 / (count - 1) as f64).collect()
}

/// Read access to the delayed state `X(t - tau_k)` handed to objectives.
pub struct DelayedView<'a> {
    buffers: &'a [HistoryBuffer],
    time: f64,
}

impl<'a> DelayedView<'a> {
    pub fn new(buffers: &'a [HistoryBuffer], time: f64) -> Self {
        DelayedView { buffers, time }
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn block(&self, l: usize) -> Result<&'a [f64]> {
        self.buffers[l].read(self.time)
    }
}

/// Smoothness metadata for step-size tuning.
#[derive(Debug, Clone, PartialEq)]
pub struct Regularity {
    /// Strong convexity of G.
    pub sigma: f64,
    /// Block smoothness L_k.
    pub lipschitz: Vec<f64>,
    /// `cross[k]` lists `(l, M_{k,l})` for every block `l ~ k` (including
    /// `k` itself when self-adjacent).
    pub cross: Vec<Vec<(usize, f64)>>,
}

/// Objective minimized by block-coordinate descent.
pub trait BlockObjective {
    fn num_blocks(&self) -> usize;

    fn block_dim(&self, k: usize) -> usize;

    /// Writes `grad_k G` evaluated on the (delayed) state into `out`.
    fn block_gradient(&self, k: usize, state: &DelayedView<'_>, out: &mut [f64]) -> Result<()>;

    fn value(&self, _blocks: &[&[f64]]) -> Option<f64> {
        None
    }

    fn optimum_value(&self) -> Option<f64> {
        None
    }

    fn regularity(&self) -> Option<Regularity> {
        None
    }
}

/// One tick of a block clock after gating.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlockEvent {
    pub time: f64,
    pub block: usize,
    pub accepted: bool,
}

/// Block-coordinate descent configuration.
#[derive(Debug, Clone)]
pub struct EngineConfig {
    pub step_sizes: Vec<f64>,
    pub delays: Vec<f64>,
    pub horizon: f64,
    pub sample_times: Vec<f64>,
    pub prune: bool,
    /// Rate for the exponentially weighted gap ratio, if wanted.
    pub gamma: Option<f64>,
}

/// Runs the delayed jump process over `events`.
pub fn run(
    objective: &dyn BlockObjective,
    events: &[BlockEvent],
    config: &EngineConfig,
    x0: &[Vec<f64>],
) -> Result<Trace> {
    let m = objective.num_blocks();
    if x0.len() != m || config.step_sizes.len() != m || config.delays.len() != m {
        return Err(Error::config("block count mismatch between objective, state, steps and delays"));
    }
    for (k, x) in x0.iter().enumerate() {
        if x.len() != objective.block_dim(k) {
            return Err(Error::config(format!("block {k} has dimension {}, expected {}", x.len(), objective.block_dim(k))));
        }
    }
    let samples = check_sample_times(&config.sample_times, config.horizon)?;
    let max_delay = config.delays.iter().copied().fold(0.0, f64::max);
    let mean_gap = if events.is_empty() { 0.0 } else { config.horizon / events.len() as f64 };
    let margin = 2.0 * (max_delay + mean_gap);

    let mut buffers: Vec<HistoryBuffer> = x0.iter().map(|x| HistoryBuffer::new(x)).collect();
    let optimum = objective.optimum_value();
    let gap_of = |buffers: &[HistoryBuffer]| -> Option<f64> {
        let blocks: Vec<&[f64]> = buffers.iter().map(|b| b.current()).collect();
        Some(objective.value(&blocks)? - optimum?)
    };
    let gap0 = gap_of(&buffers);
    let mut weighted = config.gamma.map(|g| ExpWeighted::new(g, 1));
    let mut current_gap = gap0;

    let mut trace = Trace::new(TraceKind::Engine);
    let mut next_sample = 0;
    let mut grad = Vec::new();
    let mut prev = f64::NEG_INFINITY;
    let mut pushes = 0usize;

    let record = |trace: &mut Trace, t: f64, gap: Option<f64>, weighted: &mut Option<ExpWeighted>| {
        let ratio = match (weighted.as_mut(), gap, gap0) {
            (Some(w), Some(g), Some(g0)) => {
                w.advance(t, &[g]);
                let norm = g0 * exp_weight(w.gamma, t);
                (norm > 0.0).then(|| w.integral()[0] / norm)
            }
            _ => None,
        };
        let (attempted, accepted) = (trace.events_attempted, trace.events_accepted);
        trace.samples.push(Sample {
            time: t,
            err2: gap.unwrap_or(f64::NAN),
            objective_gap: gap,
            updates_attempted: attempted,
            updates_accepted: accepted,
            weighted_ratio: ratio,
            ..Sample::default()
        });
    };

    for ev in events {
        if ev.time < prev {
            return Err(Error::NonMonotoneEvents { time: ev.time, previous: prev });
        }
        prev = ev.time;
        if ev.time > config.horizon {
            break;
        }
        while next_sample < samples.len() && samples[next_sample] < ev.time {
            record(&mut trace, samples[next_sample], current_gap, &mut weighted);
            next_sample += 1;
        }
        if let (Some(w), Some(g)) = (weighted.as_mut(), current_gap) {
            w.advance(ev.time, &[g]);
        }
        trace.events_attempted += 1;
        if !ev.accepted {
            continue;
        }
        trace.events_accepted += 1;
        let k = ev.block;
        grad.clear();
        grad.resize(objective.block_dim(k), 0.0);
        {
            let view = DelayedView::new(&buffers, ev.time - config.delays[k]);
            objective.block_gradient(k, &view, &mut grad)?;
        }
        let eta = config.step_sizes[k];
        let next: Vec<f64> = buffers[k].current().iter().zip(&grad).map(|(x, g)| x - eta * g).collect();
        if next.iter().any(|v| !v.is_finite()) {
            trace.divergence = Some(Divergence { time: ev.time, reason: format!("non-finite state in block {k}") });
            break;
        }
        buffers[k].push(ev.time, &next)?;
        trace.state_changes += 1;
        pushes += 1;
        if config.prune && pushes.is_multiple_of(256) {
            let h = ev.time - margin;
            for b in &mut buffers {
                b.prune(h);
            }
        }
        if optimum.is_some() {
            current_gap = gap_of(&buffers);
            if let (Some(g), Some(g0)) = (current_gap, gap0) {
                if g0 > 0.0 && g > DIVERGENCE_FACTOR * g0 {
                    trace.divergence = Some(Divergence { time: ev.time, reason: "objective gap exploded".into() });
                    break;
                }
            }
        }
    }
    if trace.divergence.is_none() {
        while next_sample < samples.len() {
            record(&mut trace, samples[next_sample], current_gap, &mut weighted);
            next_sample += 1;
        }
    }
    Ok(trace)
}

/// Largest step sizes allowed by the delayed coordinate descent condition
/// `K_k = p_k / (1 + sum_{l ~ k} p_l (tau_k M_kl + e tau_l M_lk) / sqrt(L_k L_l))`.
/// The actual step is `eta_k = K_k / (p_k L_k)`.
pub fn generic_step_sizes(p: &[f64], tau: &[f64], regularity: &Regularity) -> Result<Vec<f64>> {
    let m = p.len();
    let l = &regularity.lipschitz;
    if tau.len() != m || l.len() != m || regularity.cross.len() != m {
        return Err(Error::config("generic_step_sizes: inconsistent block counts"));
    }
    if let Some((k, bad)) = l.iter().enumerate().find(|(_, x)| !(**x > 0.0)) {
        return Err(Error::invalid(format!("block {k} has non-positive smoothness {bad}")));
    }
    let e = std::f64::consts::E;
    (0..m)
        .map(|k| {
            let mut denom = 1.0;
            for &(j, m_kl) in &regularity.cross[k] {
                let m_lk = regularity.cross[j]
                    .iter()
                    .find(|(i, _)| *i == k)
                    .map(|(_, v)| *v)
                    .ok_or_else(|| Error::invalid(format!("block adjacency not symmetric: {k} ~ {j}")))?;
                denom += p[j] * (tau[k] * m_kl + e * tau[j] * m_lk) / (l[k] * l[j]).sqrt();
            }
            Ok(p[k] / denom)
        })
        .collect()
}

/// `G(x) = x^T Q x / 2 - b^T x` with scalar blocks, for testing the engine.
#[derive(Debug, Clone)]
pub struct QuadraticBlocks {
    q: DMatrix<f64>,
    b: DVector<f64>,
    minimizer: DVector<f64>,
    min_value: f64,
}

impl QuadraticBlocks {
    pub fn new(q: DMatrix<f64>, b: DVector<f64>) -> Result<Self> {
        if q.nrows() != q.ncols() || q.nrows() != b.len() {
            return Err(Error::config("Q must be square and match b"));
        }
        let chol = q
            .clone()
            .cholesky()
            .ok_or_else(|| Error::invalid("Q must be symmetric positive definite"))?;
        let minimizer = chol.solve(&b);
        let min_value = -0.5 * b.dot(&minimizer);
        Ok(QuadraticBlocks { q, b, minimizer, min_value })
    }

    pub fn minimizer(&self) -> &DVector<f64> {
        &self.minimizer
    }
}

impl BlockObjective for QuadraticBlocks {
    fn num_blocks(&self) -> usize {
        self.b.len()
    }

    fn block_dim(&self, _k: usize) -> usize {
        1
    }

    fn block_gradient(&self, k: usize, state: &DelayedView<'_>, out: &mut [f64]) -> Result<()> {
        let mut g = -self.b[k];
        for l in 0..self.b.len() {
            let q = self.q[(k, l)];
            if q != 0.0 {
                g += q * state.block(l)?[0];
            }
        }
        out[0] = g;
        Ok(())
    }

    fn value(&self, blocks: &[&[f64]]) -> Option<f64> {
        let x = DVector::from_iterator(blocks.len(), blocks.iter().map(|b| b[0]));
        Some(0.5 * x.dot(&(&self.q * &x)) - self.b.dot(&x))
    }

    fn optimum_value(&self) -> Option<f64> {
        Some(self.min_value)
    }

    fn regularity(&self) -> Option<Regularity> {
        let n = self.b.len();
        let sigma = self.q.clone().symmetric_eigenvalues().min();
        let lipschitz = (0..n).map(|k| self.q[(k, k)]).collect();
        let cross = (0..n)
            .map(|k| (0..n).filter(|&l| self.q[(k, l)] != 0.0).map(|l| (l, self.q[(k, l)].abs())).collect())
            .collect();
        Some(Regularity { sigma, lipschitz, cross })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn read_examples() {
        let b = HistoryBuffer::new(&[5.0]);
        assert_eq!(b.read_delayed(3.0, 1.0).unwrap(), &[5.0]);

        let mut b = HistoryBuffer::new(&[1.0]);
        b.push(0.0, &[1.0]).unwrap();
        b.push(2.0, &[9.0]).unwrap();
        assert_eq!(b.read_delayed(2.5, 0.5).unwrap(), &[9.0]);
        assert_eq!(b.read_delayed(2.5, 1.0).unwrap(), &[1.0]);
        assert_eq!(b.read(-7.0).unwrap(), &[1.0]);
    }

    #[test]
    fn push_rejects_time_travel_and_merges_ties() {
        let mut b = HistoryBuffer::new(&[0.0]);
        b.push(1.0, &[1.0]).unwrap();
        b.push(1.0, &[2.0]).unwrap();
        assert_eq!(b.len(), 2);
        assert_eq!(b.current(), &[2.0]);
        assert!(b.push(0.5, &[3.0]).is_err());
    }

    #[test]
    fn pruned_reads_below_horizon_fail() {
        let mut b = HistoryBuffer::new(&[0.0]);
        for k in 1..=200 {
            b.push(k as f64, &[k as f64]).unwrap();
        }
        b.prune(150.5);
        assert_eq!(b.read(150.5).unwrap(), &[150.0]);
        assert_eq!(b.read(199.0).unwrap(), &[199.0]);
        assert!(matches!(b.read(100.0), Err(Error::HistoryUnderrun { .. })));
        assert!(b.len() < 60);
    }

    #[test]
    fn ewa_examples() {
        let constant = PiecewiseTrajectory::new(vec![0.0, 1.0], vec![vec![3.0], vec![3.0]]).unwrap();
        assert!((constant.ewa(0.7, 5.0).unwrap()[0] - 3.0).abs() < 1e-14);

        let steps = PiecewiseTrajectory::new(vec![0.0, 1.0], vec![vec![0.0], vec![1.0]]).unwrap();
        let e = std::f64::consts::E;
        let expected = (e * e - e) / (e * e - 1.0);
        assert!((steps.ewa(1.0, 2.0).unwrap()[0] - expected).abs() < 1e-14);

        // small gamma approaches the plain time average (1/2 here)
        let plain = steps.ewa(1e-8, 2.0).unwrap()[0];
        assert!((plain - 0.5).abs() / 0.5 <= 1e-5);

        assert_eq!(steps.ewa(1.0, 0.0).unwrap(), vec![0.0]);
        assert!(steps.ewa(0.0, 1.0).is_err());
    }

    #[test]
    fn generic_step_size_examples() {
        let reg = Regularity { sigma: 1.0, lipschitz: vec![1.0], cross: vec![vec![(0, 1.0)]] };
        assert_eq!(generic_step_sizes(&[1.0], &[0.0], &reg).unwrap(), vec![1.0]);
        let k = generic_step_sizes(&[1.0], &[1.0], &reg).unwrap()[0];
        assert!((k - 1.0 / (2.0 + std::f64::consts::E)).abs() < 1e-15);
        assert!((k - 0.2119).abs() < 1e-4);

        let reg2 = Regularity {
            sigma: 1.0,
            lipschitz: vec![1.0, 1.0],
            cross: vec![vec![(0, 1.0), (1, 1.0)], vec![(0, 1.0), (1, 1.0)]],
        };
        let ks = generic_step_sizes(&[1.0, 1.0], &[1.0, 1.0], &reg2).unwrap();
        let expected = 1.0 / (1.0 + 2.0 * (1.0 + std::f64::consts::E));
        assert!(ks.iter().all(|k| (k - expected).abs() < 1e-15));
        assert!((expected - 0.11853).abs() < 1e-5);

        let bad = Regularity { sigma: 1.0, lipschitz: vec![0.0], cross: vec![vec![]] };
        assert!(generic_step_sizes(&[1.0], &[0.0], &bad).is_err());
    }

    fn one_d() -> QuadraticBlocks {
        QuadraticBlocks::new(DMatrix::from_element(1, 1, 1.0), DVector::from_element(1, 0.0)).unwrap()
    }

    #[test]
    fn unit_curvature_step_lands_on_optimum() {
        let events = [BlockEvent { time: 0.5, block: 0, accepted: true }, BlockEvent { time: 1.5, block: 0, accepted: true }];
        let cfg = EngineConfig {
            step_sizes: vec![1.0],
            delays: vec![0.0],
            horizon: 2.0,
            sample_times: vec![0.0, 1.0, 2.0],
            prune: false,
            gamma: None,
        };
        let trace = run(&one_d(), &events, &cfg, &[vec![4.0]]).unwrap();
        let gaps: Vec<f64> = trace.samples.iter().map(|s| s.objective_gap.unwrap()).collect();
        assert_eq!(gaps, vec![8.0, 0.0, 0.0]);
        assert_eq!(trace.state_changes, 2);
    }

    #[test]
    fn early_events_read_the_initial_state() {
        // delay 10, ticks at 3 and 4: both read X(-7), X(-6) = X(0) = 1,
        // so each subtracts 0.5 * 1.
        let events = [BlockEvent { time: 3.0, block: 0, accepted: true }, BlockEvent { time: 4.0, block: 0, accepted: true }];
        let cfg = EngineConfig {
            step_sizes: vec![0.5],
            delays: vec![10.0],
            horizon: 5.0,
            sample_times: vec![5.0],
            prune: false,
            gamma: None,
        };
        let trace = run(&one_d(), &events, &cfg, &[vec![1.0]]).unwrap();
        assert_eq!(trace.samples[0].objective_gap.unwrap(), 0.0);
    }

    #[test]
    fn rejected_events_do_not_move_the_state() {
        let events = [
            BlockEvent { time: 0.1, block: 0, accepted: false },
            BlockEvent { time: 0.2, block: 0, accepted: true },
        ];
        let cfg = EngineConfig {
            step_sizes: vec![0.5],
            delays: vec![0.0],
            horizon: 1.0,
            sample_times: vec![0.15, 1.0],
            prune: false,
            gamma: None,
        };
        let trace = run(&one_d(), &events, &cfg, &[vec![2.0]]).unwrap();
        assert_eq!(trace.samples[0].objective_gap.unwrap(), 2.0);
        assert_eq!(trace.samples[1].objective_gap.unwrap(), 0.5);
        assert_eq!((trace.events_attempted, trace.events_accepted, trace.state_changes), (2, 1, 1));
    }

    #[test]
    fn non_monotone_events_are_rejected() {
        let events = [BlockEvent { time: 1.0, block: 0, accepted: true }, BlockEvent { time: 0.5, block: 0, accepted: true }];
        let cfg = EngineConfig {
            step_sizes: vec![0.5],
            delays: vec![0.0],
            horizon: 2.0,
            sample_times: vec![],
            prune: false,
            gamma: None,
        };
        assert!(matches!(run(&one_d(), &events, &cfg, &[vec![1.0]]), Err(Error::NonMonotoneEvents { .. })));
    }

    #[test]
    fn oversized_steps_are_reported_as_divergence() {
        let events: Vec<BlockEvent> =
            (1..200).map(|k| BlockEvent { time: k as f64 * 0.01, block: 0, accepted: true }).collect();
        let cfg = EngineConfig {
            step_sizes: vec![3.0],
            delays: vec![0.0],
            horizon: 2.0,
            sample_times: vec![2.0],
            prune: false,
            gamma: None,
        };
        let trace = run(&one_d(), &events, &cfg, &[vec![1.0]]).unwrap();
        assert!(trace.diverged());
    }
}
