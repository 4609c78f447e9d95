//! Mean dynamics of delayed gossip.
//!
//! The expected state obeys the delayed linear ODE
//! `dy/dt = -sum_ij K_ij grad f_ij(y(t - tau_ij))` with
//! `f_ij(y) = |y_i - y_j|^2 / 2` and `y(t) = y(0)` for `t <= 0`. Replacing
//! `y(t - tau)` by `y(t) - tau dy/dt` gives the delay-linearized system
//! `(I - Delta(K tau)) dy/dt = -Delta(K) y`.
//!
//! The delayed system is integrated with classical RK4 on a uniform grid.
//! Delayed reads inside a step use cubic Hermite interpolation of the stored
//! grid values and derivatives, which keeps the fourth order of the scheme;
//! off-grid reads by callers use linear interpolation.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::engine::DIVERGENCE_FACTOR;
use crate::error::{Error, Result};
use crate::graph::{laplacian, DelayProfile, Graph};
use crate::tuning::certify_mean_stability;

/// Node states on a uniform grid `t_k = k dt`, flattened as `n x d`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OdeTrajectory {
    pub n: usize,
    pub d: usize,
    pub dt: f64,
    pub states: Vec<Vec<f64>>,
    /// Time at which the run was stopped for blowing up.
    pub diverged_at: Option<f64>,
}

impl OdeTrajectory {
    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.states.len()).map(move |k| k as f64 * self.dt)
    }

    pub fn end_time(&self) -> f64 {
        (self.states.len() - 1) as f64 * self.dt
    }

    pub fn last(&self) -> &[f64] {
        self.states.last().expect("never empty")
    }

    /// Linear interpolation between grid points; `y(0)` before 0.
    pub fn value_at(&self, t: f64) -> Vec<f64> {
        if t <= 0.0 {
            return self.states[0].clone();
        }
        let pos = t / self.dt;
        let k = (pos.floor() as usize).min(self.states.len() - 1);
        if k + 1 >= self.states.len() {
            return self.states[k].clone();
        }
        let w = pos - k as f64;
        self.states[k].iter().zip(&self.states[k + 1]).map(|(a, b)| a + w * (b - a)).collect()
    }

    /// Squared distance of the grid state `k` to the consensus average.
    pub fn deviation2(&self, k: usize) -> f64 {
        deviation2(&self.states[k], self.n, self.d)
    }

    /// Per-component sum over nodes at grid point `k`.
    pub fn mass(&self, k: usize) -> Vec<f64> {
        let mut s = vec![0.0; self.d];
        for node in self.states[k].chunks(self.d) {
            s.iter_mut().zip(node).for_each(|(s, v)| *s += v);
        }
        s
    }
}

fn deviation2(y: &[f64], n: usize, d: usize) -> f64 {
    let mut avg = vec![0.0; d];
    for i in 0..n {
        for c in 0..d {
            avg[c] += y[i * d + c] / n as f64;
        }
    }
    (0..n).map(|i| (0..d).map(|c| (y[i * d + c] - avg[c]).powi(2)).sum::<f64>()).sum()
}

fn flatten(y0: &[Vec<f64>]) -> Result<(Vec<f64>, usize)> {
    let d = y0.first().map_or(0, |v| v.len());
    if d == 0 || y0.iter().any(|v| v.len() != d) {
        return Err(Error::config("initial vectors must share a positive dimension"));
    }
    Ok((y0.iter().flatten().copied().collect(), d))
}

fn check_inputs(graph: &Graph, k: &[f64], delays: &DelayProfile, y0: &[Vec<f64>], horizon: f64, dt: f64) -> Result<()> {
    if k.len() != graph.edge_count() || delays.comm.len() != graph.edge_count() {
        return Err(Error::config("step sizes and delays must match the edges"));
    }
    if y0.len() != graph.node_count() {
        return Err(Error::config("initial state must have one vector per node"));
    }
    if !(horizon > 0.0 && dt > 0.0 && dt <= horizon) {
        return Err(Error::invalid(format!("need 0 < dt <= horizon, got dt = {dt}, horizon = {horizon}")));
    }
    Ok(())
}

/// Largest grid step accepted for the given delays.
pub fn max_dt(delays: &DelayProfile) -> f64 {
    delays.comm.iter().copied().filter(|t| *t > 0.0).fold(f64::INFINITY, f64::min) / 10.0
}

/// A grid step satisfying the delay rule and resolving the fastest mode:
/// `min(tau_min / 10, 1 / (20 max_i sum_{j~i} K_ij))`.
pub fn default_dt(graph: &Graph, k: &[f64], delays: &DelayProfile) -> f64 {
    let max_deg = (0..graph.node_count())
        .map(|i| graph.incident(i).iter().map(|&e| k[e]).sum::<f64>())
        .fold(0.0, f64::max);
    let stiff = if max_deg > 0.0 { 1.0 / (20.0 * max_deg) } else { f64::INFINITY };
    max_dt(delays).min(stiff)
}

/// Adds `-K_e (y_i - y_j)` to `out_i` and the opposite to `out_j`.
fn add_edge_drift(graph: &Graph, e: usize, k: f64, yi: &[f64], yj: &[f64], d: usize, out: &mut [f64]) {
    let edge = graph.edge(e);
    for c in 0..d {
        let diff = k * (yi[c] - yj[c]);
        out[edge.a * d + c] -= diff;
        out[edge.b * d + c] += diff;
    }
}

struct History<'a> {
    states: &'a [Vec<f64>],
    derivs: &'a [Vec<f64>],
    dt: f64,
}

impl History<'_> {
    /// Cubic Hermite read of node `i` at time `s <= t_last`.
    fn read(&self, s: f64, i: usize, d: usize, out: &mut [f64]) {
        let range = i * d..(i + 1) * d;
        if s <= 0.0 {
            out.copy_from_slice(&self.states[0][range]);
            return;
        }
        let pos = s / self.dt;
        let mut k = pos.floor() as usize;
        let last = self.states.len() - 1;
        if k >= last {
            k = last;
            if (pos - k as f64).abs() < 1e-9 || k == 0 {
                out.copy_from_slice(&self.states[k][range]);
                return;
            }
            k -= 1;
        }
        let u = (pos - k as f64).clamp(0.0, 1.0);
        let (h00, h10, h01, h11) = (
            (1.0 + 2.0 * u) * (1.0 - u).powi(2),
            u * (1.0 - u).powi(2),
            u * u * (3.0 - 2.0 * u),
            u * u * (u - 1.0),
        );
        for (c, o) in out.iter_mut().enumerate() {
            let idx = i * d + c;
            *o = h00 * self.states[k][idx]
                + h10 * self.dt * self.derivs[k][idx]
                + h01 * self.states[k + 1][idx]
                + h11 * self.dt * self.derivs[k + 1][idx];
        }
    }
}

/// Integrates the delayed mean ODE on `[0, horizon]` with step `dt`
/// (rounded down so that the grid ends exactly at `horizon`).
pub fn integrate_delayed(
    graph: &Graph,
    k: &[f64],
    delays: &DelayProfile,
    y0: &[Vec<f64>],
    horizon: f64,
    dt: f64,
) -> Result<OdeTrajectory> {
    check_inputs(graph, k, delays, y0, horizon, dt)?;
    if dt > max_dt(delays) * (1.0 + 1e-12) {
        return Err(Error::invalid(format!("dt = {dt} exceeds a tenth of the smallest positive delay")));
    }
    let (y, d) = flatten(y0)?;
    let n = graph.node_count();
    let steps = (horizon / dt).ceil() as usize;
    let dt = horizon / steps as f64;
    let delayed: Vec<usize> = (0..graph.edge_count()).filter(|&e| delays.comm[e] > 0.0).collect();
    let instant: Vec<usize> = (0..graph.edge_count()).filter(|&e| delays.comm[e] == 0.0).collect();

    let rhs_instant = |y: &[f64], out: &mut [f64]| {
        for &e in &instant {
            let edge = graph.edge(e);
            let (yi, yj) = (&y[edge.a * d..(edge.a + 1) * d], &y[edge.b * d..(edge.b + 1) * d]);
            add_edge_drift(graph, e, k[e], yi, yj, d, out);
        }
    };
    let rhs_delayed = |hist: &History<'_>, t: f64, out: &mut [f64], bi: &mut [f64], bj: &mut [f64]| {
        for &e in &delayed {
            let edge = graph.edge(e);
            let s = t - delays.comm[e];
            hist.read(s, edge.a, d, bi);
            hist.read(s, edge.b, d, bj);
            add_edge_drift(graph, e, k[e], bi, bj, d, out);
        }
    };

    let mut states = Vec::with_capacity(steps + 1);
    let mut derivs: Vec<Vec<f64>> = Vec::with_capacity(steps + 1);
    states.push(y.clone());
    let dev0 = deviation2(&y, n, d);
    let (mut bi, mut bj) = (vec![0.0; d], vec![0.0; d]);
    // right derivative at 0: every read is y0
    let mut f0 = vec![0.0; n * d];
    rhs_instant(&y, &mut f0);
    for &e in &delayed {
        let edge = graph.edge(e);
        add_edge_drift(graph, e, k[e], &y[edge.a * d..(edge.a + 1) * d], &y[edge.b * d..(edge.b + 1) * d], d, &mut f0);
    }
    derivs.push(f0);
    let mut diverged_at = None;
    let mut stage = vec![vec![0.0; n * d]; 4];
    let mut tmp = vec![0.0; n * d];
    for step in 0..steps {
        let t = step as f64 * dt;
        let cur = states[step].clone();
        let hist = History { states: &states, derivs: &derivs, dt };
        let offsets = [0.0, 0.5, 0.5, 1.0];
        for s in 0..4 {
            if s == 0 {
                tmp.copy_from_slice(&cur);
            } else {
                let w = offsets[s] * dt;
                for ((t, c), k) in tmp.iter_mut().zip(&cur).zip(&stage[s - 1]) {
                    *t = c + w * k;
                }
            }
            let out = &mut stage[s];
            out.iter_mut().for_each(|v| *v = 0.0);
            rhs_instant(&tmp, out);
            rhs_delayed(&hist, t + offsets[s] * dt, out, &mut bi, &mut bj);
        }
        let next: Vec<f64> = (0..n * d)
            .map(|i| cur[i] + dt / 6.0 * (stage[0][i] + 2.0 * stage[1][i] + 2.0 * stage[2][i] + stage[3][i]))
            .collect();
        let dev = deviation2(&next, n, d);
        states.push(next);
        let hist = History { states: &states, derivs: &derivs, dt };
        let mut f = vec![0.0; n * d];
        rhs_instant(states.last().expect("pushed"), &mut f);
        rhs_delayed(&hist, t + dt, &mut f, &mut bi, &mut bj);
        derivs.push(f);
        if !dev.is_finite() || (dev0 > 0.0 && dev > DIVERGENCE_FACTOR * dev0) {
            diverged_at = Some(t + dt);
            break;
        }
    }
    Ok(OdeTrajectory { n, d, dt, states, diverged_at })
}

/// Integrates `(I - Delta(K tau)) dy/dt = -Delta(K) y` with RK4. Refuses
/// when `rho(Delta(K tau)) >= 1`.
pub fn integrate_linearized(
    graph: &Graph,
    k: &[f64],
    delays: &DelayProfile,
    y0: &[Vec<f64>],
    horizon: f64,
    dt: f64,
) -> Result<OdeTrajectory> {
    check_inputs(graph, k, delays, y0, horizon, dt)?;
    let (rho, stable) = certify_mean_stability(graph, k, delays)?;
    if !stable {
        return Err(Error::NotStable(rho));
    }
    let (y, d) = flatten(y0)?;
    let n = graph.node_count();
    let kt: Vec<f64> = k.iter().zip(&delays.comm).map(|(k, t)| k * t).collect();
    let m = DMatrix::identity(n, n) - laplacian(graph, &kt)?;
    let lu = m.lu();
    let a = laplacian(graph, k)?;
    let rhs = |y: &DMatrix<f64>| -> DMatrix<f64> {
        let b = -(&a * y);
        lu.solve(&b).expect("I - Delta(K tau) is invertible when rho < 1")
    };
    let steps = (horizon / dt).ceil() as usize;
    let dt = horizon / steps as f64;
    let to_flat = |m: &DMatrix<f64>| -> Vec<f64> { (0..n).flat_map(|i| (0..d).map(move |c| m[(i, c)])).collect() };
    let mut cur = DMatrix::from_row_slice(n, d, &y);
    let mut states = Vec::with_capacity(steps + 1);
    states.push(y);
    for _ in 0..steps {
        let k1 = rhs(&cur);
        let k2 = rhs(&(&cur + &k1 * (0.5 * dt)));
        let k3 = rhs(&(&cur + &k2 * (0.5 * dt)));
        let k4 = rhs(&(&cur + &k3 * dt));
        cur += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0);
        states.push(to_flat(&cur));
    }
    Ok(OdeTrajectory { n, d, dt, states, diverged_at: None })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StabilityReport {
    pub rho: f64,
    /// `rho < 1`: the sufficient condition for stability of the means.
    pub certified: bool,
    pub initial_deviation: f64,
    pub final_deviation: f64,
    /// `|y_T - ybar| / |y_0 - ybar|` (norms, not squared).
    pub ratio: f64,
    /// `ratio <= 1e-3`.
    pub decayed: bool,
    pub diverged: bool,
}

/// Integrates the delayed ODE from a random non-consensus start and
/// reports the decay of the deviation from consensus.
pub fn stability_probe(graph: &Graph, k: &[f64], delays: &DelayProfile, horizon: f64, seed: u64) -> Result<StabilityReport> {
    let (rho, certified) = certify_mean_stability(graph, k, delays)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let y0: Vec<Vec<f64>> = (0..graph.node_count()).map(|_| vec![StandardNormal.sample(&mut rng)]).collect();
    let dt = default_dt(graph, k, delays).min(horizon / 10.0);
    let traj = integrate_delayed(graph, k, delays, &y0, horizon, dt)?;
    let initial = traj.deviation2(0).sqrt();
    let last = traj.states.len() - 1;
    let fin = traj.deviation2(last).sqrt();
    let diverged = traj.diverged_at.is_some() || !fin.is_finite();
    let ratio = if initial > 0.0 { fin / initial } else { 0.0 };
    Ok(StabilityReport {
        rho,
        certified,
        initial_deviation: initial,
        final_deviation: fin,
        ratio,
        decayed: !diverged && ratio <= 1e-3,
        diverged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ring(n: usize) -> Graph {
        Graph::new(n, (0..n).map(|i| (i, (i + 1) % n))).unwrap()
    }

    #[test]
    fn consensus_start_is_a_fixed_point() {
        let g = ring(5);
        let d = DelayProfile::comm_only(&g, vec![0.2, 0.3, 0.1, 0.4, 0.5]).unwrap();
        let traj = integrate_delayed(&g, &[0.3; 5], &d, &vec![vec![2.0]; 5], 5.0, 0.01).unwrap();
        assert!(traj.states.iter().all(|s| s.iter().all(|v| *v == 2.0)));
    }

    #[test]
    fn two_node_difference_decays_exponentially() {
        let g = Graph::new(2, [(0, 1)]).unwrap();
        let d = DelayProfile::comm_only(&g, vec![0.0]).unwrap();
        let kk = 0.3;
        let traj = integrate_delayed(&g, &[kk], &d, &[vec![1.0], vec![-1.0]], 1.0, 0.01).unwrap();
        let y = traj.last();
        let expected = 2.0 * (-2.0 * kk * 1.0f64).exp();
        assert!(((y[0] - y[1]) - expected).abs() / expected <= 1e-6);
    }

    #[test]
    fn zero_delay_linearized_matches_delayed() {
        let g = ring(6);
        let d = DelayProfile::comm_only(&g, vec![0.0; 6]).unwrap();
        let k = [0.2, 0.5, 0.1, 0.7, 0.3, 0.4];
        let y0: Vec<Vec<f64>> = (0..6).map(|i| vec![i as f64, (i * i) as f64 / 10.0]).collect();
        let a = integrate_delayed(&g, &k, &d, &y0, 3.0, 0.01).unwrap();
        let b = integrate_linearized(&g, &k, &d, &y0, 3.0, 0.01).unwrap();
        for (x, y) in a.states.iter().zip(&b.states) {
            for (u, v) in x.iter().zip(y) {
                assert!((u - v).abs() <= 1e-8);
            }
        }
    }

    #[test]
    fn mass_is_conserved_by_both_integrators() {
        let g = ring(5);
        let d = DelayProfile::comm_only(&g, vec![0.1, 0.2, 0.3, 0.2, 0.1]).unwrap();
        let k = [0.4; 5];
        let y0: Vec<Vec<f64>> = (0..5).map(|i| vec![(i as f64).sin()]).collect();
        let m0: f64 = y0.iter().map(|v| v[0]).sum();
        let a = integrate_delayed(&g, &k, &d, &y0, 10.0, 0.01).unwrap();
        let b = integrate_linearized(&g, &k, &d, &y0, 10.0, 0.01).unwrap();
        for t in [&a, &b] {
            for s in 0..t.states.len() {
                assert!((t.mass(s)[0] - m0).abs() <= 1e-10);
            }
        }
    }

    #[test]
    fn refuses_coarse_grids_and_unstable_linearization() {
        let g = ring(3);
        let d = DelayProfile::comm_only(&g, vec![0.1; 3]).unwrap();
        assert!(integrate_delayed(&g, &[0.1; 3], &d, &vec![vec![0.0]; 3], 1.0, 0.05).is_err());
        let d = DelayProfile::comm_only(&g, vec![1.0; 3]).unwrap();
        assert!(matches!(
            integrate_linearized(&g, &[0.4; 3], &d, &vec![vec![0.0]; 3], 1.0, 0.01),
            Err(Error::NotStable(_))
        ));
    }

    #[test]
    fn observed_order_is_at_least_three_and_a_half() {
        let g = ring(4);
        let d = DelayProfile::comm_only(&g, vec![0.4, 0.8, 0.4, 0.8]).unwrap();
        let k = [0.6, 0.3, 0.5, 0.4];
        let y0 = vec![vec![1.0], vec![-0.5], vec![0.25], vec![2.0]];
        let end = |dt: f64| integrate_delayed(&g, &k, &d, &y0, 4.0, dt).unwrap().last().to_vec();
        let (a, b, c) = (end(0.04), end(0.02), end(0.01));
        let e1: f64 = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        let e2: f64 = b.iter().zip(&c).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        let order = (e1 / e2).log2();
        assert!(order >= 3.5, "observed order {order}");
    }

    #[test]
    fn probe_examples() {
        let g = ring(6);
        let d = DelayProfile::comm_only(&g, vec![0.0; 6]).unwrap();
        let rep = stability_probe(&g, &[0.5; 6], &d, 40.0, 1).unwrap();
        assert_eq!(rep.rho, 0.0);
        assert!(rep.certified && rep.decayed);

        let d = DelayProfile::comm_only(&g, vec![1.0; 6]).unwrap();
        let rep = stability_probe(&g, &[2.5; 6], &d, 40.0, 1).unwrap();
        assert!(!rep.certified);
        assert!(!rep.decayed);
    }

    #[test]
    fn linearized_decay_rate_matches_the_pencil() {
        let g = ring(6);
        let k = [0.15, 0.25, 0.1, 0.2, 0.18, 0.12];
        let tau = [0.5, 0.9, 1.2, 0.3, 0.8, 0.6];
        let d = DelayProfile::comm_only(&g, tau.to_vec()).unwrap();
        let (rho, ok) = certify_mean_stability(&g, &k, &d).unwrap();
        assert!(ok);
        let lambda2 = crate::graph::lambda2(&g, &k).unwrap();
        // slowest non-consensus eigenvalue of M^{-1} A from the symmetric pencil
        let kt: Vec<f64> = k.iter().zip(&tau).map(|(a, b)| a * b).collect();
        let m = DMatrix::identity(6, 6) - laplacian(&g, &kt).unwrap();
        let a = laplacian(&g, &k).unwrap();
        let chol = m.clone().cholesky().unwrap();
        let linv = chol.l().try_inverse().unwrap();
        let sym = &linv * &a * linv.transpose();
        let mut mu = sym.symmetric_eigenvalues().as_slice().to_vec();
        mu.sort_by(f64::total_cmp);
        assert!(mu[1] >= lambda2 / (1.0 + rho));

        let y0: Vec<Vec<f64>> = (0..6).map(|i| vec![(i as f64 * 1.3).cos()]).collect();
        let traj = integrate_linearized(&g, &k, &d, &y0, 10.0, 0.01).unwrap();
        let dev0 = traj.deviation2(0).sqrt();
        for (s, t) in traj.times().enumerate() {
            let bound = dev0 * (-lambda2 / (1.0 + rho) * t).exp();
            assert!(traj.deviation2(s).sqrt() <= bound * (1.0 + 1e-9) + 1e-14, "t = {t}");
        }
    }

    #[test]
    fn delayed_and_linearized_agree_as_delays_vanish() {
        let g = ring(5);
        let k = [0.4, 0.3, 0.5, 0.2, 0.35];
        let base = [1.0, 0.6, 0.8, 0.4, 1.2];
        let y0: Vec<Vec<f64>> = (0..5).map(|i| vec![i as f64 - 2.0]).collect();
        let gaps: Vec<f64> = [0.1, 0.05, 0.025]
            .iter()
            .map(|s| {
                let d = DelayProfile::comm_only(&g, base.iter().map(|t| t * s).collect()).unwrap();
                let dt = max_dt(&d);
                let a = integrate_delayed(&g, &k, &d, &y0, 5.0, dt).unwrap();
                let b = integrate_linearized(&g, &k, &d, &y0, 5.0, a.dt).unwrap();
                a.states
                    .iter()
                    .zip(&b.states)
                    .flat_map(|(x, y)| x.iter().zip(y).map(|(u, v)| (u - v).abs()))
                    .fold(0.0, f64::max)
            })
            .collect();
        assert!(gaps[0] > gaps[1] && gaps[1] > gaps[2], "{gaps:?}");
    }
}
