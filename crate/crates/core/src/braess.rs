//! Dense-versus-sparsified comparison: optimize intensities, prune the
//! edges that were switched off, then run gossip on both graphs with the
//! same seeds and compare error curves against time, update count and
//! energy.

use serde::Serialize;

use crate::config::{Algorithm, DelaySpec, ExperimentConfig, GraphSpec, IntensityRule, IntensitySpec};
use crate::error::{Error, Result};
use crate::experiment::{Experiment, ExperimentResult, SeedRun};
use crate::sparsify::{objective, optimize, prune_graph};
use crate::traces::XAxis;

/// Number of evaluation points on the shared x range.
pub const GRID_POINTS: usize = 50;
pub const AXES: [XAxis; 3] = [XAxis::Time, XAxis::Updates, XAxis::Energy];
/// Errors are clipped at this multiple of the initial error, well above
/// the rounding level of squared norms.
pub const RELATIVE_FLOOR: f64 = 1e-24;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AxisComparison {
    pub axis: XAxis,
    /// Mean of `log10 err2` over the shared grid, dense graph.
    pub dense: f64,
    pub pruned: f64,
    pub pruned_wins: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeedComparison {
    pub seed: u64,
    pub axes: Vec<AxisComparison>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BraessReport {
    pub edges_before: usize,
    pub edges_after: usize,
    pub removed: Vec<(usize, usize)>,
    pub omega: f64,
    pub objective_before: f64,
    pub objective_after: f64,
    /// Objective of the pruned graph at its `1/tau` intensities.
    pub objective_pruned_p0: f64,
    pub iterations: usize,
    pub pruned_config: ExperimentConfig,
    pub dense: ExperimentResult,
    pub pruned: ExperimentResult,
    pub comparisons: Vec<SeedComparison>,
    /// Fraction of seeds on which the pruned graph wins, per axis.
    pub win_rates: Vec<(XAxis, f64)>,
}

impl BraessReport {
    pub fn summary(&self) -> String {
        use std::fmt::Write;
        let mut s = String::new();
        let _ = writeln!(s, "edges           {} -> {}", self.edges_before, self.edges_after);
        let _ = writeln!(s, "omega           {:.6e}", self.omega);
        let _ = writeln!(s, "objective J     {:.6e} -> {:.6e} ({} iterations)", self.objective_before, self.objective_after, self.iterations);
        let _ = writeln!(s, "J(pruned, 1/tau) {:.6e}", self.objective_pruned_p0);
        for (axis, rate) in &self.win_rates {
            let _ = writeln!(s, "pruned wins on {:<8} {:>5.1}% of seeds", format!("{axis:?}").to_lowercase(), 100.0 * rate);
        }
        s
    }
}

/// Step-interpolated value of `err2` at `x` along the chosen axis.
fn curve(run: &SeedRun, axis: XAxis) -> Vec<(f64, f64)> {
    let err = run.series("err2");
    match axis {
        XAxis::Time => err,
        XAxis::Updates | XAxis::Energy => {
            let metric = if axis == XAxis::Updates { "updates_accepted" } else { "energy" };
            let xs = run.series(metric);
            xs.iter().zip(&err).map(|((_, x), (_, e))| (*x, *e)).collect()
        }
    }
}

fn value_at(curve: &[(f64, f64)], x: f64) -> f64 {
    let idx = curve.partition_point(|p| p.0 <= x);
    curve[idx.saturating_sub(1)].1
}

/// Mean `log10 err2` of both runs over `GRID_POINTS` points of
/// `(0, x_common]`, where `x_common` is the smaller of the two final x
/// values. Both curves are clipped at the same floor.
pub fn compare(dense: &SeedRun, pruned: &SeedRun, axis: XAxis) -> Result<AxisComparison> {
    let (a, b) = (curve(dense, axis), curve(pruned, axis));
    if a.is_empty() || b.is_empty() {
        return Err(Error::config("runs have no samples to compare"));
    }
    let common = a.last().expect("non-empty").0.min(b.last().expect("non-empty").0);
    let floor = (RELATIVE_FLOOR * a[0].1.max(b[0].1)).max(f64::MIN_POSITIVE);
    let score = |c: &[(f64, f64)]| {
        (1..=GRID_POINTS)
            .map(|j| value_at(c, common * j as f64 / GRID_POINTS as f64).max(floor).log10())
            .sum::<f64>()
            / GRID_POINTS as f64
    };
    let (d, p) = (score(&a), score(&b));
    Ok(AxisComparison { axis, dense: d, pruned: p, pruned_wins: p < d })
}

/// Runs the full comparison for a gossip-compatible configuration. The
/// pruned graph keeps the dense graph's delays and uses `1/tau`
/// intensities; both run on the same absolute horizon and sample grid.
pub fn run_braess(config: &ExperimentConfig, seeds: &[u64], parallel: bool) -> Result<BraessReport> {
    let mut sparsify_cfg = config.clone();
    sparsify_cfg.algorithm = Algorithm::Sparsify;
    let sparsify_exp = Experiment::new(sparsify_cfg)?;
    let problem = sparsify_exp.sparsify_problem()?;
    let spec = &config.sparsify;
    let opt = optimize(&problem, spec.iters, spec.tol)?;
    let pruned = prune_graph(&problem.graph, &opt.p, spec.threshold)?;

    let mut dense_cfg = config.clone();
    dense_cfg.algorithm = Algorithm::Gossip;
    let dense = Experiment::new(dense_cfg.clone())?;

    let n = problem.graph.node_count();
    let mut pruned_cfg = dense_cfg;
    pruned_cfg.name = config.name.as_ref().map(|s| format!("{s}_pruned"));
    pruned_cfg.graph = GraphSpec::Explicit { n, edges: pruned.graph.edges().iter().map(|e| [e.a, e.b]).collect() };
    pruned_cfg.delays = DelaySpec::Explicit {
        comm: pruned.kept.iter().map(|&e| dense.net.delays.comm[e]).collect(),
        comp: Some(dense.net.delays.comp.clone()),
    };
    pruned_cfg.intensities = IntensitySpec::Rule(IntensityRule::InverseDelay);
    pruned_cfg.run.horizon = Some(dense.horizon);
    pruned_cfg.run.horizon_gamma = None;
    pruned_cfg.run.sample_times = Some(dense.sample_times.clone());
    pruned_cfg.capacities = None;
    let pruned_exp = Experiment::new(pruned_cfg.clone())?;

    let pruned_problem = crate::sparsify::SparsifyProblem::new(
        pruned.graph.clone(),
        pruned_exp.net.delays.comm.clone(),
        problem.omega,
        pruned_exp.net.intensities.edge.clone(),
        None,
    )?;
    let objective_pruned_p0 = objective(&pruned_problem.p0, &pruned_problem)?;

    let dense_res = dense.run(seeds, parallel)?;
    let pruned_res = pruned_exp.run(seeds, parallel)?;
    let comparisons: Vec<SeedComparison> = dense_res
        .runs
        .iter()
        .zip(&pruned_res.runs)
        .map(|(d, p)| {
            Ok(SeedComparison { seed: d.seed, axes: AXES.iter().map(|&a| compare(d, p, a)).collect::<Result<_>>()? })
        })
        .collect::<Result<_>>()?;
    let win_rates = AXES
        .iter()
        .enumerate()
        .map(|(k, &a)| {
            let wins = comparisons.iter().filter(|c| c.axes[k].pruned_wins).count();
            (a, wins as f64 / comparisons.len().max(1) as f64)
        })
        .collect();
    let removed = (0..problem.graph.edge_count())
        .filter(|e| !pruned.kept.contains(e))
        .map(|e| {
            let edge = problem.graph.edge(e);
            (edge.a, edge.b)
        })
        .collect();
    Ok(BraessReport {
        edges_before: problem.graph.edge_count(),
        edges_after: pruned.graph.edge_count(),
        removed,
        omega: problem.omega,
        objective_before: opt.initial(),
        objective_after: opt.final_value(),
        objective_pruned_p0,
        iterations: opt.iterations,
        pruned_config: pruned_cfg,
        dense: dense_res,
        pruned: pruned_res,
        comparisons,
        win_rates,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiment::Row;

    fn run(points: &[(f64, f64)]) -> SeedRun {
        let rows = points
            .iter()
            .flat_map(|&(t, e)| {
                [
                    Row { time: t, metric: "err2", value: e },
                    Row { time: t, metric: "updates_accepted", value: 10.0 * t },
                    Row { time: t, metric: "energy", value: t * t },
                ]
            })
            .collect();
        SeedRun { seed: 0, kind: "gossip", rows, divergence: None, events_attempted: 0, events_accepted: 0 }
    }

    #[test]
    fn lower_curve_wins_on_every_axis() {
        let slow = run(&[(0.0, 1.0), (1.0, 0.5), (2.0, 0.25)]);
        let fast = run(&[(0.0, 1.0), (1.0, 0.1), (2.0, 0.01)]);
        for axis in AXES {
            let c = compare(&slow, &fast, axis).unwrap();
            assert!(c.pruned_wins);
            assert!(!compare(&fast, &slow, axis).unwrap().pruned_wins);
        }
    }

    #[test]
    fn step_interpolation_reads_the_last_sample() {
        let c = [(0.0, 4.0), (1.0, 2.0), (2.0, 1.0)];
        assert_eq!(value_at(&c, 0.5), 4.0);
        assert_eq!(value_at(&c, 1.0), 2.0);
        assert_eq!(value_at(&c, 7.0), 1.0);
    }

    #[test]
    fn line_with_slow_closing_edge() {
        let text = include_str!("../presets/braess_line.toml").replace("seeds = 20", "seeds = 2").replace("horizon = 400.0", "horizon = 40.0");
        let config = ExperimentConfig::from_toml_str(&text).unwrap();
        let report = run_braess(&config, &[0, 1], false).unwrap();
        assert_eq!(report.removed, vec![(0, 9)]);
        assert_eq!(report.edges_after, 9);
        assert!(report.objective_after > report.objective_before);
    }

    #[test]
    fn huge_penalty_is_refused() {
        let text = include_str!("../presets/braess_line.toml").replace("iters = 500", "iters = 500\nomega = 1e9");
        let config = ExperimentConfig::from_toml_str(&text).unwrap();
        assert!(matches!(run_braess(&config, &[0], false), Err(Error::Disconnected)));
    }
}
