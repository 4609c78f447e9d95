//! Monte-Carlo orchestration: builds a tuned instance from a configuration,
//! runs it for a list of seeds and aggregates the results.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::config::{Algorithm, ExperimentConfig, InitSpec, Mode};
use crate::ddo::{run_ddo, DdoOptions, QuadraticLocal};
use crate::engine::{check_sample_times, uniform_samples, Divergence, Sample};
use crate::error::{Error, Result};
use crate::gossip::{relative_drift, run_gossip, GossipOptions, ProtocolConfig};
use crate::network::NetworkSpec;
use crate::ode::{default_dt, integrate_delayed};
use crate::sparsify::{default_omega, optimize, SparsifyProblem};
use crate::tuning::{tune_ddo, tune_gossip, TunedParameters};

/// Metrics emitted for stochastic traces, in CSV order.
pub const METRICS: [&str; 7] =
    ["err2", "ewa_err2", "energy", "updates_attempted", "updates_accepted", "bound_rhs", "conserved_audit"];

/// Salt separating initial-state draws from the clock streams.
const INIT_SALT: u64 = 0x9e37_79b9_7f4a_7c15;

/// One metric value at one time.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Row {
    pub time: f64,
    pub metric: &'static str,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeedRun {
    pub seed: u64,
    pub kind: &'static str,
    pub rows: Vec<Row>,
    pub divergence: Option<Divergence>,
    pub events_attempted: u64,
    pub events_accepted: u64,
}

impl SeedRun {
    /// Values of `metric` in time order.
    pub fn series(&self, metric: &str) -> Vec<(f64, f64)> {
        self.rows.iter().filter(|r| r.metric == metric).map(|r| (r.time, r.value)).collect()
    }

    pub fn last(&self, metric: &str) -> Option<f64> {
        self.rows.iter().rev().find(|r| r.metric == metric).map(|r| r.value)
    }
}

/// A configuration resolved into a tuned network.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub net: NetworkSpec,
    pub tuned: Option<TunedParameters>,
    pub locals: Option<Vec<QuadraticLocal>>,
    pub gamma: Option<f64>,
    pub horizon: f64,
    pub sample_times: Vec<f64>,
}

impl Experiment {
    pub fn new(config: ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let net = config.network()?;
        let (mut tuned, locals) = match config.algorithm {
            Algorithm::Gossip | Algorithm::Ode => (Some(tune_gossip(&net)?), None),
            Algorithm::Ddo => {
                let spec = config.ddo.as_ref().expect("validated");
                let locals = spec.locals.build(net.node_count(), spec.sigma, spec.l)?;
                (Some(tune_ddo(&net, spec.sigma, spec.l)?), Some(locals))
            }
            Algorithm::Sparsify => (None, None),
        };
        if let Some(t) = &mut tuned {
            let s = config.tuning.k_scale;
            t.k_comm.iter_mut().chain(t.k_comp.iter_mut()).for_each(|k| *k *= s);
        }
        let gamma = config.tuning.gamma.or(tuned.as_ref().map(|t| t.gamma));
        let horizon = match (config.run.horizon, config.run.horizon_gamma) {
            _ if config.algorithm == Algorithm::Sparsify => 0.0,
            (Some(h), _) => h,
            (None, Some(m)) => match gamma {
                Some(g) if g > 0.0 => m / g,
                _ => return Err(Error::config("horizon_gamma needs a positive rate")),
            },
            (None, None) => 0.0,
        };
        let sample_times = match &config.run.sample_times {
            Some(t) => check_sample_times(t, horizon)?,
            None if horizon > 0.0 => uniform_samples(horizon, config.run.samples),
            None => Vec::new(),
        };
        Ok(Experiment { config, net, tuned, locals, gamma, horizon, sample_times })
    }

    /// Initial node states for a run seed.
    pub fn initial_state(&self, seed: u64) -> Vec<Vec<f64>> {
        let n = self.net.node_count();
        match &self.config.init {
            InitSpec::Gaussian { dim } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed ^ INIT_SALT);
                (0..n).map(|_| (0..*dim).map(|_| StandardNormal.sample(&mut rng)).collect()).collect()
            }
            InitSpec::Explicit { values } => values.clone(),
            InitSpec::Consensus { dim, value } => vec![vec![*value; *dim]; n],
        }
    }

    pub fn run_seed(&self, seed: u64) -> Result<SeedRun> {
        match self.config.algorithm {
            Algorithm::Gossip => self.run_gossip(seed),
            Algorithm::Ddo => self.run_ddo(seed),
            Algorithm::Ode => self.run_ode(seed),
            Algorithm::Sparsify => self.run_sparsify(seed),
        }
    }

    fn tuned(&self) -> &TunedParameters {
        self.tuned.as_ref().expect("stochastic algorithms are tuned")
    }

    fn bound_rhs(&self, err0: f64, t: f64) -> Option<f64> {
        let tuned = self.tuned.as_ref()?;
        let gamma = self.gamma?;
        (t > 0.0)
            .then(|| crate::tuning::bound_curve(gamma, tuned.tau_max, tuned.prefactor, t).ok())
            .flatten()
            .map(|b| b * err0)
    }

    fn sample_rows(&self, samples: &[Sample]) -> Vec<Row> {
        let err0 = samples.first().map_or(0.0, |s| s.err2);
        let mut rows = Vec::with_capacity(samples.len() * METRICS.len());
        for s in samples {
            let values = [
                Some(s.err2),
                s.ewa_err2,
                Some(s.energy),
                Some(s.updates_attempted as f64),
                Some(s.updates_accepted as f64),
                self.bound_rhs(err0, s.time),
                s.conserved_audit,
            ];
            for (metric, v) in METRICS.iter().zip(values) {
                if let Some(value) = v {
                    rows.push(Row { time: s.time, metric, value });
                }
            }
        }
        rows
    }

    fn run_gossip(&self, seed: u64) -> Result<SeedRun> {
        let run = &self.config.run;
        let mut opts = GossipOptions::new(self.horizon, self.sample_times.clone());
        opts.protocol = match run.mode {
            Mode::Oracle => ProtocolConfig::Oracle,
            Mode::Protocol => ProtocolConfig::Protocol { tau_ping: vec![run.tau_ping; self.net.edge_count()] },
        };
        opts.gamma = self.gamma;
        opts.semantics = run.semantics;
        opts.max_events = run.max_events;
        let trace = run_gossip(&self.net, &self.tuned().k_comm, &self.initial_state(seed), &opts, seed)?;
        Ok(SeedRun {
            seed,
            kind: "gossip",
            rows: self.sample_rows(&trace.samples),
            divergence: trace.divergence,
            events_attempted: trace.events_attempted,
            events_accepted: trace.events_accepted,
        })
    }

    fn run_ddo(&self, seed: u64) -> Result<SeedRun> {
        let spec = self.config.ddo.as_ref().expect("validated");
        let run = &self.config.run;
        let mut opts = DdoOptions::new(self.horizon, self.sample_times.clone(), spec.sigma);
        opts.scaling = spec.scaling;
        opts.halve_gossip = spec.halve_gossip;
        opts.gamma = self.gamma;
        opts.semantics = run.semantics;
        opts.max_events = run.max_events;
        let t = self.tuned();
        let locals = self.locals.as_ref().expect("built with the experiment");
        let trace = run_ddo(&self.net, &t.k_comm, &t.k_comp, locals, &opts, seed)?;
        Ok(SeedRun {
            seed,
            kind: "ddo",
            rows: self.sample_rows(&trace.samples),
            divergence: trace.divergence,
            events_attempted: trace.events_attempted,
            events_accepted: trace.events_accepted,
        })
    }

    fn run_ode(&self, seed: u64) -> Result<SeedRun> {
        let k = &self.tuned().k_comm;
        let y0 = self.initial_state(seed);
        let dt = self.config.run.dt.unwrap_or_else(|| default_dt(&self.net.graph, k, &self.net.delays));
        let traj = integrate_delayed(&self.net.graph, k, &self.net.delays, &y0, self.horizon, dt.min(self.horizon))?;
        let mass0 = traj.mass(0);
        let scale0: f64 = y0.iter().flatten().map(|v| v.abs()).sum();
        let mut rows = Vec::new();
        let end = traj.end_time();
        for &t in self.sample_times.iter().filter(|t| **t <= end + 1e-12) {
            let y = traj.value_at(t);
            let (n, d) = (traj.n, traj.d);
            let mut mass = vec![0.0; d];
            for i in 0..n {
                for c in 0..d {
                    mass[c] += y[i * d + c];
                }
            }
            let mean: Vec<f64> = mass.iter().map(|m| m / n as f64).collect();
            let err2: f64 = (0..n).map(|i| (0..d).map(|c| (y[i * d + c] - mean[c]).powi(2)).sum::<f64>()).sum();
            rows.push(Row { time: t, metric: "err2", value: err2 });
            rows.push(Row { time: t, metric: "conserved_audit", value: relative_drift(&mass, &mass0, scale0) });
        }
        let divergence = traj
            .diverged_at
            .map(|time| Divergence { time, reason: "deviation exceeded 1e12 times its initial value".into() });
        Ok(SeedRun { seed, kind: "ode", rows, divergence, events_attempted: 0, events_accepted: 0 })
    }

    fn run_sparsify(&self, seed: u64) -> Result<SeedRun> {
        let problem = self.sparsify_problem()?;
        let spec = &self.config.sparsify;
        let res = optimize(&problem, spec.iters, spec.tol)?;
        let rows = res
            .history
            .iter()
            .enumerate()
            .map(|(i, v)| Row { time: i as f64, metric: "objective", value: *v })
            .collect();
        Ok(SeedRun { seed, kind: "sparsify", rows, divergence: None, events_attempted: 0, events_accepted: 0 })
    }

    pub fn sparsify_problem(&self) -> Result<SparsifyProblem> {
        let mut problem = SparsifyProblem::new(
            self.net.graph.clone(),
            self.net.delays.comm.clone(),
            0.0,
            self.net.intensities.edge.clone(),
            None,
        )?;
        problem.omega = match self.config.sparsify.omega {
            Some(w) if w >= 0.0 => w,
            Some(w) => return Err(Error::config(format!("sparsify.omega must be nonnegative, got {w}"))),
            None => default_omega(&problem)?,
        };
        Ok(problem)
    }

    /// Runs every seed; `parallel` spreads seeds over the worker pool when
    /// the `parallel` feature is enabled. Output order follows `seeds`.
    pub fn run(&self, seeds: &[u64], parallel: bool) -> Result<ExperimentResult> {
        let runs = run_seeds(seeds, parallel, |s| self.run_seed(s))?;
        let summary = RunSummary::new(&runs, self.gamma);
        Ok(ExperimentResult { name: self.config.name.clone(), tuned: self.tuned.clone(), runs, summary })
    }
}

/// Maps `f` over seeds, serially or on the worker pool, keeping the order.
pub fn run_seeds<T: Send>(seeds: &[u64], parallel: bool, f: impl Fn(u64) -> Result<T> + Sync) -> Result<Vec<T>> {
    #[cfg(feature = "parallel")]
    if parallel {
        use rayon::prelude::*;
        return seeds.par_iter().map(|&s| f(s)).collect();
    }
    let _ = parallel;
    seeds.iter().map(|&s| f(s)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentResult {
    pub name: Option<String>,
    pub tuned: Option<TunedParameters>,
    pub runs: Vec<SeedRun>,
    pub summary: RunSummary,
}

impl ExperimentResult {
    pub fn diverged(&self) -> bool {
        self.runs.iter().any(|r| r.divergence.is_some())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeedSummary {
    pub seed: u64,
    pub final_err2: Option<f64>,
    pub final_ewa_err2: Option<f64>,
    pub gamma: Option<f64>,
    /// `bound_rhs - ewa_err2` at every sample time where both exist.
    pub bound_margins: Vec<(f64, f64)>,
    pub energy: Option<f64>,
    pub updates_attempted: u64,
    pub updates_accepted: u64,
    pub diverged: bool,
    pub divergence_reason: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MeanSe {
    pub mean: f64,
    pub se: f64,
    pub count: usize,
}

impl MeanSe {
    pub fn of(values: &[f64]) -> Option<Self> {
        let n = values.len();
        if n == 0 {
            return None;
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let se = if n > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64 / n as f64).sqrt()
        } else {
            0.0
        };
        Some(MeanSe { mean, se, count: n })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub seeds: Vec<SeedSummary>,
    pub final_err2: Option<MeanSe>,
    pub final_ewa_err2: Option<MeanSe>,
    pub energy: Option<MeanSe>,
    pub updates_accepted: Option<MeanSe>,
    pub diverged_seeds: Vec<u64>,
}

impl RunSummary {
    pub fn new(runs: &[SeedRun], gamma: Option<f64>) -> Self {
        let seeds: Vec<SeedSummary> = runs
            .iter()
            .map(|r| {
                let ewa = r.series("ewa_err2");
                let bound = r.series("bound_rhs");
                let bound_margins = bound
                    .iter()
                    .filter_map(|(t, b)| ewa.iter().find(|(s, _)| s == t).map(|(_, e)| (*t, b - e)))
                    .collect();
                SeedSummary {
                    seed: r.seed,
                    final_err2: r.last("err2"),
                    final_ewa_err2: r.last("ewa_err2"),
                    gamma,
                    bound_margins,
                    energy: r.last("energy"),
                    updates_attempted: r.events_attempted,
                    updates_accepted: r.events_accepted,
                    diverged: r.divergence.is_some(),
                    divergence_reason: r.divergence.as_ref().map(|d| d.reason.clone()),
                }
            })
            .collect();
        let collect = |f: &dyn Fn(&SeedSummary) -> Option<f64>| MeanSe::of(&seeds.iter().filter_map(f).collect::<Vec<_>>());
        RunSummary {
            final_err2: collect(&|s| s.final_err2),
            final_ewa_err2: collect(&|s| s.final_ewa_err2),
            energy: collect(&|s| s.energy),
            updates_accepted: collect(&|s| Some(s.updates_accepted as f64)),
            diverged_seeds: seeds.iter().filter(|s| s.diverged).map(|s| s.seed).collect(),
            seeds,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config(extra: &str) -> ExperimentConfig {
        let text = format!(
            r#"
algorithm = "gossip"
graph = {{ kind = "ring", n = 6 }}
delays = {{ kind = "uniform", tau = 0.2 }}
run = {{ horizon = 5.0, samples = 11, seeds = 3 }}
{extra}
"#
        );
        ExperimentConfig::from_toml_str(&text).unwrap()
    }

    #[test]
    fn consensus_start_gives_zero_error() {
        let exp = Experiment::new(config("init = { kind = \"consensus\", value = 2.5 }")).unwrap();
        let res = exp.run(&[0, 1], false).unwrap();
        for run in &res.runs {
            assert!(run.series("err2").iter().all(|(_, v)| *v == 0.0));
        }
    }

    #[test]
    fn bound_rhs_matches_the_tuned_curve() {
        let exp = Experiment::new(config("")).unwrap();
        let run = exp.run_seed(3).unwrap();
        let err0 = run.series("err2")[0].1;
        let t = exp.tuned.as_ref().unwrap();
        for (time, b) in run.series("bound_rhs") {
            assert_eq!(b, err0 * t.bound(time).unwrap());
        }
        assert_eq!(run.series("bound_rhs").len(), 10);
    }

    #[test]
    fn parallel_and_serial_agree() {
        let exp = Experiment::new(config("")).unwrap();
        let seeds = [5, 1, 9, 2];
        assert_eq!(exp.run(&seeds, true).unwrap(), exp.run(&seeds, false).unwrap());
    }

    #[test]
    fn horizon_in_rate_units() {
        let text = config("").to_toml_string().replace("horizon = 5.0", "horizon_gamma = 4.0");
        let exp = Experiment::new(ExperimentConfig::from_toml_str(&text).unwrap()).unwrap();
        assert!((exp.horizon * exp.gamma.unwrap() - 4.0).abs() < 1e-12);
    }

    #[test]
    fn ode_and_sparsify_runs_emit_rows() {
        let text = config("").to_toml_string().replace("\"gossip\"", "\"ode\"");
        let exp = Experiment::new(ExperimentConfig::from_toml_str(&text).unwrap()).unwrap();
        let run = exp.run_seed(0).unwrap();
        assert_eq!(run.series("err2").len(), 11);
        assert!(run.series("conserved_audit").iter().all(|(_, v)| *v <= 1e-10));

        let text = config("").to_toml_string().replace("\"gossip\"", "\"sparsify\"");
        let exp = Experiment::new(ExperimentConfig::from_toml_str(&text).unwrap()).unwrap();
        let run = exp.run_seed(0).unwrap();
        let j = run.series("objective");
        assert!(j.windows(2).all(|w| w[1].1 >= w[0].1));
    }

    #[test]
    fn summary_aggregates() {
        let m = MeanSe::of(&[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(m.mean, 2.0);
        assert!((m.se - (1.0f64 / 3.0).sqrt()).abs() < 1e-15);
        let exp = Experiment::new(config("")).unwrap();
        let res = exp.run(&[0, 1, 2], false).unwrap();
        assert_eq!(res.summary.seeds.len(), 3);
        assert!(res.summary.seeds.iter().all(|s| s.updates_accepted <= s.updates_attempted));
        assert!(res.summary.diverged_seeds.is_empty());
    }
}
