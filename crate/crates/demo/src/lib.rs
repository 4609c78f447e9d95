//! Browser bindings: run a configuration and plot its error curve, probe
//! the mean dynamics for stability, and sparsify a graph. Every entry point
//! takes a TOML configuration and returns JSON.

use delaygossip::config::{Algorithm, ExperimentConfig};
use delaygossip::experiment::{Experiment, MeanSe};
use delaygossip::ode::{default_dt, integrate_delayed};
use delaygossip::presets::PRESETS;
use delaygossip::sparsify::{optimize, prune_graph};
use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

/// Upper bound on the gossip events the page will simulate in one call.
pub const MAX_EVENTS: f64 = 2e6;
/// Points kept on each returned curve.
const CURVE_POINTS: usize = 200;

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

fn parse(config: &str) -> Result<ExperimentConfig, String> {
    ExperimentConfig::from_toml_str(config).map_err(err)
}

fn thin<T: Clone>(v: &[T]) -> Vec<T> {
    let stride = v.len().div_ceil(CURVE_POINTS).max(1);
    let mut out: Vec<T> = v.iter().step_by(stride).cloned().collect();
    if !(v.len() - 1).is_multiple_of(stride) {
        out.push(v[v.len() - 1].clone());
    }
    out
}

pub fn preset_list() -> String {
    let names: Vec<&str> = PRESETS.iter().map(|(n, _)| *n).collect();
    json!(names).to_string()
}

pub fn preset_text(name: &str) -> Option<String> {
    delaygossip::presets::source(name).map(str::to_string)
}

/// Runs `seeds` seeds of a gossip or DDO configuration and returns the
/// cross-seed mean and standard error of `err2` and of the bound.
pub fn run_json(config: &str, seeds: u32) -> Result<String, String> {
    let cfg = parse(config)?;
    if !matches!(cfg.algorithm, Algorithm::Gossip | Algorithm::Ddo) {
        return Err("the run view needs algorithm = \"gossip\" or \"ddo\"".into());
    }
    let exp = Experiment::new(cfg).map_err(err)?;
    let tuned = exp.tuned.as_ref().ok_or("configuration has no step sizes")?;
    let rate: f64 = exp.net.intensities.edge.iter().chain(&exp.net.intensities.comp).sum();
    if rate * exp.horizon * seeds as f64 > MAX_EVENTS {
        return Err(format!(
            "about {:.1e} events requested; shorten the horizon or use fewer seeds (limit {MAX_EVENTS:.0e})",
            rate * exp.horizon * seeds as f64
        ));
    }
    let ids: Vec<u64> = (0..seeds as u64).collect();
    let result = exp.run(&ids, false).map_err(err)?;
    let curve = |metric: &str| -> Vec<[f64; 3]> {
        let per_seed: Vec<Vec<(f64, f64)>> = result.runs.iter().map(|r| r.series(metric)).collect();
        let len = per_seed.iter().map(Vec::len).min().unwrap_or(0);
        let pts: Vec<[f64; 3]> = (0..len)
            .map(|k| {
                let values: Vec<f64> = per_seed.iter().map(|s| s[k].1).collect();
                let m = MeanSe::of(&values).expect("at least one seed");
                [per_seed[0][k].0, m.mean, m.se]
            })
            .collect();
        if pts.is_empty() { pts } else { thin(&pts) }
    };
    Ok(json!({
        "report": tuned.report(),
        "gamma": exp.gamma,
        "horizon": exp.horizon,
        "diverged": result.summary.diverged_seeds,
        "err2": curve("err2"),
        "bound": curve("bound_rhs"),
    })
    .to_string())
}

/// Integrates the mean dynamics with the tuned step sizes multiplied by
/// `k_scale` and reports the stability certificate next to the observed
/// decay of the disagreement.
pub fn stability_json(config: &str, k_scale: f64, horizon: f64, seed: u64) -> Result<String, String> {
    let mut cfg = parse(config)?;
    if cfg.algorithm == Algorithm::Sparsify {
        cfg.algorithm = Algorithm::Gossip;
    }
    cfg.tuning.k_scale = k_scale;
    let exp = Experiment::new(cfg).map_err(err)?;
    let tuned = exp.tuned.as_ref().ok_or("configuration has no step sizes")?;
    let (graph, delays, k) = (&exp.net.graph, &exp.net.delays, &tuned.k_comm);
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err("horizon must be positive".into());
    }
    let dt = default_dt(graph, k, delays).min(horizon / 10.0);
    if horizon / dt > 2e5 {
        return Err(format!("{:.0} integration steps requested; shorten the horizon", horizon / dt));
    }
    let y0: Vec<Vec<f64>> = exp.initial_state(seed).into_iter().map(|x| vec![x[0]]).collect();
    let traj = integrate_delayed(graph, k, delays, &y0, horizon, dt).map_err(err)?;
    let points: Vec<[f64; 2]> = traj.times().enumerate().map(|(i, t)| [t, traj.deviation2(i)]).collect();
    let (rho, certified) = delaygossip::tuning::certify_mean_stability(graph, k, delays).map_err(err)?;
    let first = points[0][1];
    let last = points[points.len() - 1][1];
    Ok(json!({
        "rho": rho,
        "certified": certified,
        "diverged": traj.diverged_at.is_some() || !last.is_finite(),
        "ratio": if first > 0.0 { (last / first).sqrt() } else { 0.0 },
        "deviation2": thin(&points),
    })
    .to_string())
}

/// Optimizes the edge intensities and lists the edges that were switched off.
pub fn sparsify_json(config: &str, omega: Option<f64>) -> Result<String, String> {
    let mut cfg = parse(config)?;
    cfg.algorithm = Algorithm::Sparsify;
    if let Some(w) = omega {
        cfg.sparsify.omega = Some(w);
    }
    let exp = Experiment::new(cfg.clone()).map_err(err)?;
    let problem = exp.sparsify_problem().map_err(err)?;
    let opt = optimize(&problem, cfg.sparsify.iters, cfg.sparsify.tol).map_err(err)?;
    let pruned = prune_graph(&problem.graph, &opt.p, cfg.sparsify.threshold);
    let edges: Vec<Value> = problem
        .graph
        .edges()
        .iter()
        .enumerate()
        .map(|(i, e)| json!({ "a": e.a, "b": e.b, "tau": problem.tau[i], "p0": problem.p0[i], "p": opt.p[i] }))
        .collect();
    let (kept, connected) = match &pruned {
        Ok(p) => (p.kept.clone(), true),
        Err(_) => ((0..opt.p.len()).filter(|&i| opt.p[i] > cfg.sparsify.threshold).collect(), false),
    };
    Ok(json!({
        "omega": problem.omega,
        "history": thin(&opt.history),
        "iterations": opt.iterations,
        "edges": edges,
        "kept": kept,
        "connected": connected,
    })
    .to_string())
}

#[wasm_bindgen]
pub fn presets() -> String {
    preset_list()
}

#[wasm_bindgen]
pub fn preset(name: &str) -> Option<String> {
    preset_text(name)
}

#[wasm_bindgen]
pub fn run(config: &str, seeds: u32) -> Result<String, JsError> {
    run_json(config, seeds).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn stability(config: &str, k_scale: f64, horizon: f64, seed: u32) -> Result<String, JsError> {
    stability_json(config, k_scale, horizon, seed as u64).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn sparsify(config: &str, omega: Option<f64>) -> Result<String, JsError> {
    sparsify_json(config, omega).map_err(|e| JsError::new(&e))
}
