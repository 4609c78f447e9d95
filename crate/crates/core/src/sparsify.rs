//! Delay-aware graph sparsification.
//!
//! The objective `J(p) = lambda2(Delta(K(p))) - omega sum_e p_e tau_e`
//! trades the spectral rate certified for delayed gossip against the total
//! communication load. It is maximized over intensities `p >= 0` by
//! projected gradient ascent, after which edges whose intensity vanished are
//! removed.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::graph::{all_edge_neighbors, lambda2, laplacian, sorted_spectrum, Graph};
use crate::tuning::edge_step_sizes_with;

/// Gap below which `lambda2` is treated as repeated.
pub const DEGENERACY_GAP: f64 = 1e-8;
pub const ARMIJO: f64 = 1e-4;
pub const PRUNE_THRESHOLD: f64 = 1e-6;
const MAX_HALVINGS: usize = 60;

#[derive(Debug, Clone, PartialEq)]
pub struct SparsifyProblem {
    pub graph: Graph,
    /// Per-edge communication delays, all positive.
    pub tau: Vec<f64>,
    pub omega: f64,
    pub p0: Vec<f64>,
    /// Optional per-edge upper bounds on the intensities.
    pub caps: Option<Vec<f64>>,
    neighbors: Vec<Vec<usize>>,
}

impl SparsifyProblem {
    pub fn new(graph: Graph, tau: Vec<f64>, omega: f64, p0: Vec<f64>, caps: Option<Vec<f64>>) -> Result<Self> {
        let m = graph.edge_count();
        if tau.len() != m || p0.len() != m || caps.as_ref().is_some_and(|c| c.len() != m) {
            return Err(Error::config("delays, intensities and caps must have one entry per edge"));
        }
        if let Some(t) = tau.iter().find(|t| !(t.is_finite() && **t > 0.0)) {
            return Err(Error::invalid(format!("delays must be positive, got {t}")));
        }
        if !(omega.is_finite() && omega >= 0.0) {
            return Err(Error::invalid(format!("penalty weight must be nonnegative, got {omega}")));
        }
        check_nonnegative(&p0)?;
        if let Some(c) = caps.as_ref().and_then(|c| c.iter().find(|c| !(**c >= 0.0))) {
            return Err(Error::invalid(format!("intensity cap {c} is negative")));
        }
        let neighbors = all_edge_neighbors(&graph);
        Ok(SparsifyProblem { graph, tau, omega, p0, caps, neighbors })
    }

    /// Problem with `p0 = 1/tau` and the default penalty weight.
    pub fn with_defaults(graph: Graph, tau: Vec<f64>) -> Result<Self> {
        let p0: Vec<f64> = tau.iter().map(|t| 1.0 / t).collect();
        let mut problem = Self::new(graph, tau, 0.0, p0, None)?;
        problem.omega = default_omega(&problem)?;
        Ok(problem)
    }

    pub fn step_sizes(&self, p: &[f64]) -> Vec<f64> {
        edge_step_sizes_with(&self.neighbors, p, &self.tau)
    }

    fn project(&self, p: &mut [f64]) {
        for (e, v) in p.iter_mut().enumerate() {
            *v = v.max(0.0);
            if let Some(c) = &self.caps {
                *v = v.min(c[e]);
            }
        }
    }
}

fn check_nonnegative(p: &[f64]) -> Result<()> {
    match p.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
        Some(v) => Err(Error::invalid(format!("intensity {v} is negative or not finite"))),
        None => Ok(()),
    }
}

/// `omega = lambda2(Delta(K(p0))) / (2 sum_e p0_e tau_e)`, which makes the
/// two terms of the objective comparable at `p0`.
pub fn default_omega(problem: &SparsifyProblem) -> Result<f64> {
    let load: f64 = problem.p0.iter().zip(&problem.tau).map(|(p, t)| p * t).sum();
    if load == 0.0 {
        return Ok(0.0);
    }
    Ok(0.5 * lambda2(&problem.graph, &problem.step_sizes(&problem.p0))? / load)
}

pub fn objective(p: &[f64], problem: &SparsifyProblem) -> Result<f64> {
    if p.len() != problem.graph.edge_count() {
        return Err(Error::config("one intensity per edge expected"));
    }
    check_nonnegative(p)?;
    let spectral = lambda2(&problem.graph, &problem.step_sizes(p))?;
    let load: f64 = p.iter().zip(&problem.tau).map(|(p, t)| p * t).sum();
    Ok(spectral - problem.omega * load)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Gradient {
    pub grad: Vec<f64>,
    /// `lambda2` was (numerically) repeated, so `grad` is a subgradient
    /// averaged over its eigenspace.
    pub degenerate: bool,
}

/// Gradient of [`objective`] from `d lambda2 / d K_e = (u_a - u_b)^2` for
/// the unit Fiedler vector `u`, chained through `K(p)`. A repeated `lambda2`
/// uses the mean of `(u_a - u_b)^2` over an orthonormal basis of its
/// eigenspace.
pub fn grad_objective(p: &[f64], problem: &SparsifyProblem) -> Result<Gradient> {
    check_nonnegative(p)?;
    let graph = &problem.graph;
    let k = problem.step_sizes(p);
    let (values, vectors) = sorted_spectrum(laplacian(graph, &k)?);
    let cluster: Vec<usize> = (1..values.len()).take_while(|&c| values[c] - values[1] <= DEGENERACY_GAP).collect();
    let degenerate = cluster.len() > 1;
    let dk: Vec<f64> = graph
        .edges()
        .iter()
        .map(|e| {
            cluster.iter().map(|&c| (vectors[(e.a, c)] - vectors[(e.b, c)]).powi(2)).sum::<f64>() / cluster.len() as f64
        })
        .collect();
    let mut grad: Vec<f64> = problem.tau.iter().map(|t| -problem.omega * t).collect();
    for (e, nb) in problem.neighbors.iter().enumerate() {
        let denom = 1.0 + nb.iter().map(|&g| p[g] * (problem.tau[e] + std::f64::consts::E * problem.tau[g])).sum::<f64>();
        grad[e] += dk[e] / denom;
        for &g in nb {
            grad[g] -= dk[e] * p[e] * (problem.tau[e] + std::f64::consts::E * problem.tau[g]) / (denom * denom);
        }
    }
    Ok(Gradient { grad, degenerate })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SparsifyResult {
    pub p: Vec<f64>,
    /// Objective after each accepted iteration, starting at `J(p0)`.
    pub history: Vec<f64>,
    pub iterations: usize,
    /// Projected-gradient norm fell below the tolerance.
    pub converged: bool,
    pub degenerate_steps: usize,
}

impl SparsifyResult {
    pub fn initial(&self) -> f64 {
        self.history[0]
    }

    pub fn final_value(&self) -> f64 {
        *self.history.last().expect("never empty")
    }
}

/// Projected gradient ascent on `{0 <= p <= caps}` with Armijo backtracking
/// that starts each iteration at step 1 and halves on rejection.
pub fn optimize(problem: &SparsifyProblem, iters: usize, tol: f64) -> Result<SparsifyResult> {
    let mut p = problem.p0.clone();
    problem.project(&mut p);
    let mut value = objective(&p, problem)?;
    let mut history = vec![value];
    let mut converged = false;
    let mut degenerate_steps = 0;
    let mut iterations = 0;
    while iterations < iters {
        let Gradient { grad, degenerate } = grad_objective(&p, problem)?;
        let mut full: Vec<f64> = p.iter().zip(&grad).map(|(p, g)| p + g).collect();
        problem.project(&mut full);
        let pg: f64 = full.iter().zip(&p).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        if pg <= tol {
            converged = true;
            break;
        }
        let mut step = if degenerate { 0.5 } else { 1.0 };
        degenerate_steps += usize::from(degenerate);
        let mut accepted = None;
        for _ in 0..MAX_HALVINGS {
            let mut trial: Vec<f64> = p.iter().zip(&grad).map(|(p, g)| p + step * g).collect();
            problem.project(&mut trial);
            let ascent: f64 = trial.iter().zip(&p).zip(&grad).map(|((t, p), g)| g * (t - p)).sum();
            let trial_value = objective(&trial, problem)?;
            if trial_value >= value + ARMIJO * ascent && trial_value >= value {
                accepted = Some((trial, trial_value));
                break;
            }
            step *= 0.5;
        }
        iterations += 1;
        match accepted {
            Some((trial, v)) => {
                p = trial;
                value = v;
                history.push(value);
            }
            None => break,
        }
    }
    Ok(SparsifyResult { p, history, iterations, converged, degenerate_steps })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Pruned {
    pub graph: Graph,
    pub p: Vec<f64>,
    /// Original index of every kept edge.
    pub kept: Vec<usize>,
}

/// Removes edges with `p_e < threshold`; refuses if the result is
/// disconnected.
pub fn prune_graph(graph: &Graph, p: &[f64], threshold: f64) -> Result<Pruned> {
    if p.len() != graph.edge_count() {
        return Err(Error::config("one intensity per edge expected"));
    }
    let (pruned, kept) = graph.filter_edges(|e| p[e] >= threshold);
    if !pruned.is_connected() {
        return Err(Error::Disconnected);
    }
    let p = kept.iter().map(|&e| p[e]).collect();
    Ok(Pruned { graph: pruned, p, kept })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::E;

    fn line_with_slow_closure() -> SparsifyProblem {
        let n = 10;
        let mut edges: Vec<(usize, usize)> = (0..n - 1).map(|i| (i, i + 1)).collect();
        edges.push((0, n - 1));
        let mut tau = vec![1.0; n - 1];
        tau.push(100.0);
        SparsifyProblem::with_defaults(Graph::new(n, edges).unwrap(), tau).unwrap()
    }

    #[test]
    fn objective_examples() {
        let g = Graph::new(2, [(0, 1)]).unwrap();
        let problem = SparsifyProblem::new(g, vec![0.7], 0.3, vec![1.0], None).unwrap();
        assert_eq!(objective(&[0.0], &problem).unwrap(), 0.0);
        let p = 1.8;
        let expected = 2.0 * p / (1.0 + p * 0.7 * (1.0 + E)) - 0.3 * p * 0.7;
        assert!((objective(&[p], &problem).unwrap() - expected).abs() < 1e-12);
        assert!(objective(&[-1.0], &problem).is_err());
    }

    #[test]
    fn gradient_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut checked = 0;
        while checked < 10 {
            let n = rng.random_range(4..8);
            let edges: Vec<(usize, usize)> = (0..n)
                .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
                .filter(|_| rng.random_bool(0.6))
                .collect();
            let Ok(g) = Graph::new(n, edges) else { continue };
            let m = g.edge_count();
            let tau: Vec<f64> = (0..m).map(|_| rng.random_range(0.1..2.0)).collect();
            let p: Vec<f64> = (0..m).map(|_| rng.random_range(0.2..2.0)).collect();
            let omega = rng.random_range(0.0..0.5);
            let problem = SparsifyProblem::new(g, tau, omega, p.clone(), None).unwrap();
            let grad = grad_objective(&p, &problem).unwrap();
            if grad.degenerate {
                continue;
            }
            let h = 1e-6;
            let fd: Vec<f64> = (0..m)
                .map(|e| {
                    let (mut a, mut b) = (p.clone(), p.clone());
                    a[e] += h;
                    b[e] -= h;
                    (objective(&a, &problem).unwrap() - objective(&b, &problem).unwrap()) / (2.0 * h)
                })
                .collect();
            let err: f64 = fd.iter().zip(&grad.grad).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            let norm: f64 = fd.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!(err <= 1e-5 * norm, "relative error {}", err / norm);
            checked += 1;
        }
    }

    #[test]
    fn triangle_gradient_is_symmetric_and_penalty_is_linear() {
        let g = Graph::new(3, [(0, 1), (1, 2), (0, 2)]).unwrap();
        let problem = SparsifyProblem::new(g.clone(), vec![0.5; 3], 0.0, vec![1.0; 3], None).unwrap();
        let grad = grad_objective(&[1.0; 3], &problem).unwrap();
        assert!(grad.degenerate);
        assert!(grad.grad.iter().all(|v| (v - grad.grad[0]).abs() < 1e-12));

        let tau = vec![0.5, 1.5, 0.9];
        let p = vec![1.0, 0.4, 2.0];
        let a = SparsifyProblem::new(g.clone(), tau.clone(), 0.0, p.clone(), None).unwrap();
        let b = SparsifyProblem::new(g, tau.clone(), 0.7, p.clone(), None).unwrap();
        let (ga, gb) = (grad_objective(&p, &a).unwrap(), grad_objective(&p, &b).unwrap());
        for ((b, a), t) in gb.grad.iter().zip(&ga.grad).zip(&tau) {
            assert!((b - a + 0.7 * t).abs() < 1e-14);
        }
    }

    #[test]
    fn large_penalty_switches_everything_off() {
        let g = Graph::new(4, [(0, 1), (1, 2), (2, 3), (3, 0), (0, 2)]).unwrap();
        let tau = vec![0.2, 0.5, 1.0, 0.3, 0.8];
        let omega = 1e3 * tau.iter().map(|t| 1.0 / (t * t)).fold(0.0, f64::max);
        let p0 = tau.iter().map(|t| 1.0 / t).collect();
        let problem = SparsifyProblem::new(g, tau, omega, p0, None).unwrap();
        let res = optimize(&problem, 100, 1e-9).unwrap();
        assert!(res.p.iter().all(|v| *v <= 1e-6));
        assert!(prune_graph(&problem.graph, &res.p, PRUNE_THRESHOLD).is_err());
    }

    #[test]
    fn slow_closing_edge_is_removed() {
        let problem = line_with_slow_closure();
        let res = optimize(&problem, 500, 1e-10).unwrap();
        assert!(res.p[9] < 1e-4, "closing edge intensity {}", res.p[9]);
        assert!(res.final_value() > res.initial());
        assert!(res.history.windows(2).all(|w| w[1] >= w[0]));

        // removing the edge alone already improves the objective
        let mut off = problem.p0.clone();
        off[9] = 0.0;
        assert!(objective(&off, &problem).unwrap() > objective(&problem.p0, &problem).unwrap());

        let pruned = prune_graph(&problem.graph, &res.p, PRUNE_THRESHOLD).unwrap();
        assert_eq!(pruned.graph.edge_count(), 9);
        assert_eq!(pruned.kept, (0..9).collect::<Vec<_>>());
    }

    #[test]
    fn caps_bound_the_iterates() {
        let mut problem = line_with_slow_closure();
        problem.omega = 0.0;
        problem.caps = Some(vec![1.2; 10]);
        let res = optimize(&problem, 50, 1e-10).unwrap();
        assert!(res.p.iter().all(|v| *v <= 1.2 && *v >= 0.0));
    }

    #[test]
    fn zero_threshold_keeps_everything() {
        let problem = line_with_slow_closure();
        let pruned = prune_graph(&problem.graph, &problem.p0, 0.0).unwrap();
        assert_eq!(pruned.graph, problem.graph);
        assert_eq!(pruned.p, problem.p0);
    }
}
