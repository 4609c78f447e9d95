//! Step sizes, rate certificates and capacity feasibility checks.
//!
//! Every upper bound on a step size is instantiated at equality. Rates are
//! taken at `GAMMA_SAFETY` times the admissible minimum so that strict
//! inequalities stay strict.

use std::f64::consts::E;
use std::fmt;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::graph::{all_edge_neighbors, lambda2, spectral_radius, DelayProfile, Graph};
use crate::network::{Intensities, NetworkSpec};
use crate::ppp::CapacityProfile;

pub const GAMMA_SAFETY: f64 = 0.999;

/// `c = 1/(1 - sqrt(ln 6 / 2))`, the constant of the capacity conditions.
pub fn capacity_constant() -> f64 {
    1.0 / (1.0 - (6f64.ln() / 2.0).sqrt())
}

/// `K_ij = p_ij / (1 + sum_{kl ~ ij} p_kl (tau_ij + e tau_kl))`, the sum
/// running over edges sharing a node with `ij`, `ij` included.
pub fn edge_step_sizes(graph: &Graph, p: &[f64], tau: &[f64]) -> Vec<f64> {
    let neighbors = all_edge_neighbors(graph);
    edge_step_sizes_with(&neighbors, p, tau)
}

/// Same as [`edge_step_sizes`] with precomputed edge neighborhoods.
pub fn edge_step_sizes_with(neighbors: &[Vec<usize>], p: &[f64], tau: &[f64]) -> Vec<f64> {
    neighbors
        .iter()
        .enumerate()
        .map(|(e, nb)| {
            let s: f64 = nb.iter().map(|&f| p[f] * (tau[e] + E * tau[f])).sum();
            p[e] / (1.0 + s)
        })
        .collect()
}

pub fn gossip_step_sizes(net: &NetworkSpec) -> Vec<f64> {
    edge_step_sizes(&net.graph, &net.intensities.edge, &net.delays.comm)
}

/// Communication and computation step sizes of the dual method.
pub fn ddo_step_sizes(net: &NetworkSpec) -> (Vec<f64>, Vec<f64>) {
    let k_comm = gossip_step_sizes(net);
    let g = &net.graph;
    let p = &net.intensities;
    let k_comp = (0..g.node_count())
        .map(|i| {
            let s: f64 = g
                .incident(i)
                .iter()
                .map(|&e| p.edge[e] * (net.delays.comp[i] + E * net.delays.comm[e]))
                .sum();
            p.comp[i] / (1.0 + s)
        })
        .collect();
    (k_comm, k_comp)
}

/// `min(lambda2(Delta(K)) / 2, 1 / tau_max)`.
pub fn gamma_gossip(graph: &Graph, k: &[f64], tau_max: f64) -> Result<f64> {
    Ok((lambda2(graph, k)? / 2.0).min(1.0 / tau_max))
}

/// `min(c sigma/L lambda2(Delta(K)), 1 / tau_max)` with `c = 1/4`, or
/// `1/8` under capacity gating.
pub fn gamma_ddo(graph: &Graph, k: &[f64], sigma: f64, l: f64, tau_max: f64, capacity_on: bool) -> Result<f64> {
    if !(sigma > 0.0 && l >= sigma) {
        return Err(Error::invalid(format!("need 0 < sigma <= L, got sigma = {sigma}, L = {l}")));
    }
    let factor = if capacity_on { 8.0 } else { 4.0 };
    Ok((sigma / (factor * l) * lambda2(graph, k)?).min(1.0 / tau_max))
}

/// Lower bound on the acceptance probability of a block update: 1/2 under
/// capacity gating, 1 otherwise.
pub fn default_acceptance_floor(gated: bool) -> f64 {
    if gated {
        0.5
    } else {
        1.0
    }
}

/// `min(sigma min_k eps_k K_k / L_k, 1 / tau_max)` for the generic engine.
pub fn gamma_generic(sigma: f64, eps: &[f64], k: &[f64], l: &[f64], tau_max: f64) -> f64 {
    let spectral = eps
        .iter()
        .zip(k)
        .zip(l)
        .map(|((e, k), l)| e * k / l)
        .fold(f64::INFINITY, f64::min);
    (sigma * spectral).min(1.0 / tau_max)
}

/// Right side of the rate certificate:
/// `prefactor * e^{-gamma T/2} (1 + tau_max/T) / (1 - gamma tau_max)`.
pub fn bound_curve(gamma: f64, tau_max: f64, prefactor: f64, t: f64) -> Result<f64> {
    if gamma * tau_max >= 1.0 {
        return Err(Error::invalid(format!("gamma * tau_max = {} must be below 1", gamma * tau_max)));
    }
    if !(t > 0.0) {
        return Err(Error::invalid(format!("bound_curve needs T > 0, got {t}")));
    }
    Ok(prefactor * (-gamma * t / 2.0).exp() * (1.0 + tau_max / t) / (1.0 - gamma * tau_max))
}

/// Spectral radius of `Delta({tau_ij K_ij})` and whether it is below one.
pub fn certify_mean_stability(graph: &Graph, k: &[f64], delays: &DelayProfile) -> Result<(f64, bool)> {
    let w: Vec<f64> = k.iter().zip(&delays.comm).map(|(k, t)| k * t).collect();
    let rho = spectral_radius(graph, &w)?;
    Ok((rho, rho < 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstraintKind {
    Computation,
    Edge,
    NodeComm,
}

impl fmt::Display for ConstraintKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ConstraintKind::Computation => "comp",
            ConstraintKind::Edge => "edge",
            ConstraintKind::NodeComm => "node_comm",
        })
    }
}

/// One capacity condition `load <= cap`, with `load = c * p * tau`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConstraintCheck {
    pub kind: ConstraintKind,
    pub index: usize,
    pub load: f64,
    pub cap: u32,
    pub satisfied: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CapacityReport {
    pub feasible: bool,
    pub checks: Vec<ConstraintCheck>,
}

impl CapacityReport {
    pub fn violations(&self) -> impl Iterator<Item = &ConstraintCheck> {
        self.checks.iter().filter(|c| !c.satisfied)
    }
}

/// Evaluates the three families of capacity conditions. Unbounded caps
/// generate no check.
pub fn capacity_feasible(net: &NetworkSpec, caps: &CapacityProfile) -> Result<CapacityReport> {
    caps.validate(&net.graph)?;
    let c = capacity_constant();
    let g = &net.graph;
    let (p, d) = (&net.intensities, &net.delays);
    let mut checks = Vec::new();
    let mut push = |kind, index, load: f64, cap: Option<u32>| {
        if let Some(q) = cap {
            checks.push(ConstraintCheck { kind, index, load, cap: q, satisfied: load <= q as f64 });
        }
    };
    for i in 0..g.node_count() {
        push(ConstraintKind::Computation, i, c * p.comp[i] * d.comp[i], caps.comp[i]);
    }
    for e in 0..g.edge_count() {
        push(ConstraintKind::Edge, e, c * p.edge[e] * d.comm[e], caps.edge[e]);
    }
    for i in 0..g.node_count() {
        let rate: f64 = g.incident(i).iter().map(|&e| p.edge[e]).sum();
        push(ConstraintKind::NodeComm, i, c * rate * d.comm_node[i], caps.comm[i]);
    }
    let feasible = checks.iter().all(|c| c.satisfied);
    Ok(CapacityReport { feasible, checks })
}

/// Scales the `1/tau` intensities down until every capacity condition
/// holds, each clock taking the tightest of its own edge constraint and
/// both endpoint constraints. Zero delays fall back to rate `fallback`.
pub fn max_capacity_intensities(graph: &Graph, delays: &DelayProfile, caps: &CapacityProfile, fallback: f64) -> Result<Intensities> {
    caps.validate(graph)?;
    let c = capacity_constant();
    let base = Intensities::inverse_delay(delays, fallback);
    let scale = |cap: Option<u32>, load: f64| match cap {
        Some(q) if load > 0.0 => (q as f64 / load).min(1.0),
        _ => 1.0,
    };
    let node_scale: Vec<f64> = (0..graph.node_count())
        .map(|i| {
            let rate: f64 = graph.incident(i).iter().map(|&e| base.edge[e]).sum();
            scale(caps.comm[i], c * rate * delays.comm_node[i])
        })
        .collect();
    let edge = (0..graph.edge_count())
        .map(|e| {
            let ed = graph.edge(e);
            let s = scale(caps.edge[e], c * base.edge[e] * delays.comm[e])
                .min(node_scale[ed.a])
                .min(node_scale[ed.b]);
            base.edge[e] * s
        })
        .collect();
    let comp = (0..graph.node_count())
        .map(|i| base.comp[i] * scale(caps.comp[i], c * base.comp[i] * delays.comp[i]))
        .collect();
    Ok(Intensities { edge, comp })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Gossip,
    Ddo,
}

/// Certified parameters for one network.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TunedParameters {
    pub method: Method,
    pub k_comm: Vec<f64>,
    pub k_comp: Vec<f64>,
    /// Certified rate, already multiplied by [`GAMMA_SAFETY`].
    pub gamma: f64,
    /// Spectral term of the rate before taking the min with `1/tau_max`.
    pub spectral_term: f64,
    pub lambda2: f64,
    pub tau_max: f64,
    pub prefactor: f64,
    pub rho: f64,
    pub mean_stable: bool,
    pub capacity: Option<CapacityReport>,
}

impl TunedParameters {
    pub fn bound(&self, t: f64) -> Result<f64> {
        bound_curve(self.gamma, self.tau_max, self.prefactor, t)
    }

    /// True when every certificate holds.
    pub fn certified(&self) -> bool {
        self.gamma > 0.0
            && self.gamma * self.tau_max < 1.0
            && self.mean_stable
            && self.capacity.as_ref().is_none_or(|c| c.feasible)
    }

    /// Human-readable certificate.
    pub fn report(&self) -> String {
        use std::fmt::Write;
        let mut s = String::new();
        let _ = writeln!(s, "method          {:?}", self.method);
        let _ = writeln!(s, "edges           {}", self.k_comm.len());
        let (lo, hi) = min_max(&self.k_comm);
        let _ = writeln!(s, "K_comm range    [{lo:.6e}, {hi:.6e}]");
        if !self.k_comp.is_empty() {
            let (lo, hi) = min_max(&self.k_comp);
            let _ = writeln!(s, "K_comp range    [{lo:.6e}, {hi:.6e}]");
        }
        let _ = writeln!(s, "lambda2         {:.6e}", self.lambda2);
        let _ = writeln!(s, "tau_max         {:.6e}", self.tau_max);
        let _ = writeln!(s, "gamma           {:.6e}", self.gamma);
        let _ = writeln!(s, "gamma*tau_max   {:.6e}", self.gamma * self.tau_max);
        let _ = writeln!(s, "bound prefactor {:.6e}", self.prefactor);
        let _ = writeln!(s, "rho(tau K)      {:.6e} ({})", self.rho, if self.mean_stable { "stable" } else { "NOT stable" });
        match &self.capacity {
            None => {
                let _ = writeln!(s, "capacity        unbounded");
            }
            Some(rep) => {
                let _ = writeln!(s, "capacity        {}", if rep.feasible { "feasible" } else { "INFEASIBLE" });
                for v in rep.violations() {
                    let _ = writeln!(s, "  violated {} #{}: c*p*tau = {:.6} > q = {}", v.kind, v.index, v.load, v.cap);
                }
            }
        }
        s
    }
}

fn min_max(v: &[f64]) -> (f64, f64) {
    v.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| (lo.min(*x), hi.max(*x)))
}

fn capacity_part(net: &NetworkSpec) -> Result<Option<CapacityReport>> {
    if net.caps.is_unbounded() {
        Ok(None)
    } else {
        capacity_feasible(net, &net.caps).map(Some)
    }
}

/// Step sizes and rate for delayed randomized gossip.
pub fn tune_gossip(net: &NetworkSpec) -> Result<TunedParameters> {
    if let Some(p) = net.intensities.edge.iter().find(|p| !(**p > 0.0)) {
        return Err(Error::invalid(format!("gossip needs positive edge intensities, got {p}")));
    }
    let k = gossip_step_sizes(net);
    let tau_max = net.delays.max_comm();
    let l2 = lambda2(&net.graph, &k)?;
    let spectral = l2 / 2.0;
    let gamma = GAMMA_SAFETY * spectral.min(1.0 / tau_max);
    let (rho, mean_stable) = certify_mean_stability(&net.graph, &k, &net.delays)?;
    Ok(TunedParameters {
        method: Method::Gossip,
        k_comm: k,
        k_comp: Vec::new(),
        gamma,
        spectral_term: spectral,
        lambda2: l2,
        tau_max,
        prefactor: 1.0,
        rho,
        mean_stable,
        capacity: capacity_part(net)?,
    })
}

/// Step sizes and rate for the dual decentralized method. The rate constant
/// halves when any capacity is finite.
pub fn tune_ddo(net: &NetworkSpec, sigma: f64, l: f64) -> Result<TunedParameters> {
    let (k_comm, k_comp) = ddo_step_sizes(net);
    let tau_max = net.delays.max_overall();
    let capacity = capacity_part(net)?;
    let factor = if capacity.is_some() { 8.0 } else { 4.0 };
    let l2 = lambda2(&net.graph, &k_comm)?;
    let spectral = sigma / (factor * l) * l2;
    let gamma = GAMMA_SAFETY * gamma_ddo(&net.graph, &k_comm, sigma, l, tau_max, capacity.is_some())?;
    let (rho, mean_stable) = certify_mean_stability(&net.graph, &k_comm, &net.delays)?;
    Ok(TunedParameters {
        method: Method::Ddo,
        k_comm,
        k_comp,
        gamma,
        spectral_term: spectral,
        lambda2: l2,
        tau_max,
        prefactor: l / sigma,
        rho,
        mean_stable,
        capacity,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * (1.0 + b.abs())
    }

    fn net(graph: Graph, comm: Vec<f64>, comp: Vec<f64>, p_edge: Vec<f64>, p_comp: Vec<f64>) -> NetworkSpec {
        let delays = DelayProfile::new(&graph, comm, comp).unwrap();
        let caps = CapacityProfile::unbounded(&graph);
        NetworkSpec::new(graph, delays, Intensities { edge: p_edge, comp: p_comp }, caps).unwrap()
    }

    fn k3() -> Graph {
        Graph::new(3, [(0, 1), (1, 2), (0, 2)]).unwrap()
    }

    #[test]
    fn gossip_step_size_examples() {
        let n = net(k3(), vec![0.0; 3], vec![0.0; 3], vec![1.0, 2.0, 3.0], vec![0.0; 3]);
        assert_eq!(gossip_step_sizes(&n), vec![1.0, 2.0, 3.0]);

        let n = net(k3(), vec![1.0; 3], vec![0.0; 3], vec![1.0; 3], vec![0.0; 3]);
        let expected = 1.0 / (4.0 + 3.0 * E);
        assert!(gossip_step_sizes(&n).iter().all(|k| close(*k, expected, 1e-15)));
        assert!((expected - 0.08227).abs() < 1e-5);

        let two = Graph::new(2, [(0, 1)]).unwrap();
        let n = net(two, vec![0.5], vec![0.0; 2], vec![2.0], vec![0.0; 2]);
        let k = gossip_step_sizes(&n)[0];
        assert!(close(k, 2.0 / (2.0 + E), 1e-15));
        assert!((k - 0.4239).abs() < 1e-4);
    }

    #[test]
    fn ddo_step_size_examples() {
        let star = Graph::new(4, [(0, 1), (0, 2), (0, 3)]).unwrap();
        let n = net(star, vec![1.0; 3], vec![2.0; 4], vec![1.0; 3], vec![1.0; 4]);
        let (k_comm, k_comp) = ddo_step_sizes(&n);
        assert!(close(k_comp[0], 1.0 / (1.0 + 3.0 * (2.0 + E)), 1e-15));
        assert!((k_comp[0] - 0.065985).abs() < 1e-6);
        assert_eq!(k_comm, gossip_step_sizes(&n));

        let two = Graph::new(2, [(0, 1)]).unwrap();
        let n = net(two, vec![1.0], vec![3.0; 2], vec![1e-300], vec![0.7; 2]);
        assert!(close(ddo_step_sizes(&n).1[0], 0.7, 1e-12));
    }

    #[test]
    fn gamma_examples() {
        assert_eq!((4.0f64 / 2.0).min(1.0), 1.0);
        let two = Graph::new(2, [(0, 1)]).unwrap();
        // lambda2 of a single edge with weight w is 2w
        assert!(close(gamma_gossip(&two, &[2.0], 1.0).unwrap(), 1.0, 1e-12));
        assert!(close(gamma_gossip(&two, &[0.1], 1.0).unwrap(), 0.1, 1e-12));

        // sigma = L: factor 1/4 or 1/8 of lambda2 = 2 * 0.5 = 1
        assert!(close(gamma_ddo(&two, &[0.5], 1.0, 1.0, 0.1, false).unwrap(), 0.25, 1e-12));
        assert!(close(gamma_ddo(&two, &[0.5], 1.0, 1.0, 0.1, true).unwrap(), 0.125, 1e-12));
        assert!(close(gamma_ddo(&two, &[1e6], 1.0, 1.0, 2.0, false).unwrap(), 0.5, 1e-12));
        // kappa = 10, lambda2 = 1, tau_max = 100
        assert!(close(gamma_ddo(&two, &[0.5], 1.0, 10.0, 100.0, false).unwrap(), 0.01, 1e-12));
        assert!(close(gamma_ddo(&two, &[0.5], 1.0, 10.0, 1.0, false).unwrap(), 0.025, 1e-12));
    }

    #[test]
    fn capacity_constant_value() {
        assert!((capacity_constant() - 18.69482).abs() < 1e-5);
    }

    #[test]
    fn capacity_feasibility_examples() {
        let c = capacity_constant();
        let two = Graph::new(2, [(0, 1)]).unwrap();
        let tau = 0.5;
        let mk = |p: f64| {
            let delays = DelayProfile::new(&two, vec![tau], vec![0.0; 2]).unwrap();
            let caps = CapacityProfile { edge: vec![Some(3)], comm: vec![None; 2], comp: vec![None; 2] };
            NetworkSpec::new(two.clone(), delays, Intensities { edge: vec![p], comp: vec![0.0; 2] }, caps).unwrap()
        };
        let boundary = mk(3.0 / (c * tau));
        assert!(capacity_feasible(&boundary, &boundary.caps).unwrap().feasible);
        let over = mk(1.01 * 3.0 / (c * tau));
        let rep = capacity_feasible(&over, &over.caps).unwrap();
        assert!(!rep.feasible);
        let v: Vec<_> = rep.violations().collect();
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].kind, ConstraintKind::Edge);

        let unb = CapacityProfile::unbounded(&two);
        assert!(capacity_feasible(&over, &unb).unwrap().feasible);
    }

    #[test]
    fn max_capacity_intensity_examples() {
        let c = capacity_constant();
        let two = Graph::new(2, [(0, 1)]).unwrap();
        let d = DelayProfile::new(&two, vec![0.3], vec![0.0; 2]).unwrap();
        let caps = CapacityProfile { edge: vec![Some(1)], comm: vec![None; 2], comp: vec![None; 2] };
        let p = max_capacity_intensities(&two, &d, &caps, 1.0).unwrap();
        assert!(close(p.edge[0], 1.0 / (c * 0.3), 1e-14));

        let k = 5;
        let star = Graph::new(k + 1, (1..=k).map(|j| (0, j))).unwrap();
        let d = DelayProfile::new(&star, vec![0.2; k], vec![0.0; k + 1]).unwrap();
        let mut caps = CapacityProfile::unbounded(&star);
        caps.comm[0] = Some(1);
        let p = max_capacity_intensities(&star, &d, &caps, 1.0).unwrap();
        for pe in &p.edge {
            assert!(close(*pe, 1.0 / (c * k as f64 * 0.2), 1e-14));
        }
        let delays = d.clone();
        let n = NetworkSpec::new(star.clone(), delays, p, caps.clone()).unwrap();
        assert!(capacity_feasible(&n, &caps).unwrap().feasible);

        let p = max_capacity_intensities(&star, &d, &CapacityProfile::unbounded(&star), 1.0).unwrap();
        assert!(p.edge.iter().all(|x| close(*x, 5.0, 1e-14)));
    }

    #[test]
    fn acceptance_floor_defaults() {
        assert_eq!(default_acceptance_floor(true), 0.5);
        assert_eq!(default_acceptance_floor(false), 1.0);
        let gated = gamma_generic(1.0, &[default_acceptance_floor(true)], &[0.4], &[1.0], 0.1);
        let free = gamma_generic(1.0, &[default_acceptance_floor(false)], &[0.4], &[1.0], 0.1);
        assert!((free - 2.0 * gated).abs() < 1e-15);
    }

    #[test]
    fn bound_curve_examples() {
        assert!(close(bound_curve(0.0, 1.0, 2.0, 4.0).unwrap(), 2.0 * 1.25, 1e-15));
        assert!(close(bound_curve(0.3, 0.0, 1.0, 4.0).unwrap(), (-0.6f64).exp(), 1e-15));
        let v = bound_curve(0.5, 1.0, 1.0, 2.0).unwrap();
        assert!(close(v, 3.0 * (-0.5f64).exp(), 1e-15));
        assert!((v - 1.8196).abs() < 1e-4);
        assert!(bound_curve(1.0, 1.0, 1.0, 2.0).is_err());
    }

    #[test]
    fn mean_stability_examples() {
        let g = k3();
        let zero = DelayProfile::new(&g, vec![0.0; 3], vec![0.0; 3]).unwrap();
        assert_eq!(certify_mean_stability(&g, &[5.0; 3], &zero).unwrap(), (0.0, true));
        let one = DelayProfile::new(&g, vec![1.0; 3], vec![0.0; 3]).unwrap();
        let (rho, ok) = certify_mean_stability(&g, &[0.1; 3], &one).unwrap();
        assert!(close(rho, 0.3, 1e-12) && ok);
        let (rho, ok) = certify_mean_stability(&g, &[0.4; 3], &one).unwrap();
        assert!(close(rho, 1.2, 1e-12) && !ok);
    }

    #[test]
    fn two_node_tuning_matches_hand_values() {
        let two = Graph::new(2, [(0, 1)]).unwrap();
        let d = DelayProfile::comm_only(&two, vec![0.5]).unwrap();
        let n = NetworkSpec::with_default_intensities(two, d).unwrap();
        let t = tune_gossip(&n).unwrap();
        let k = 2.0 / (2.0 + E);
        assert!(close(t.k_comm[0], k, 1e-14));
        assert!(close(t.gamma, GAMMA_SAFETY * k, 1e-12));
        assert!(t.certified());
    }
}
