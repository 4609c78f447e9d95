//! Experiment configuration files.
//!
//! A configuration is a TOML document naming a graph, its delays and
//! intensities, the algorithm to run and the sampling schedule. Unknown keys
//! are rejected. Every run is fully determined by the configuration and the
//! run seed.

use serde::{Deserialize, Serialize};

use crate::ddo::{DdoScaling, QuadraticLocal};
use crate::error::{Error, Result};
use crate::graph::{DelayProfile, Graph};
use crate::network::{Intensities, NetworkSpec};
use crate::ppp::{CapacityProfile, CountSemantics};
use crate::problems::{gen_graph, gen_quadratics, DelayMixture, GraphKind};
use crate::tuning::max_capacity_intensities;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Gossip,
    Ddo,
    Ode,
    Sparsify,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub name: Option<String>,
    pub algorithm: Algorithm,
    pub graph: GraphSpec,
    pub delays: DelaySpec,
    #[serde(default)]
    pub intensities: IntensitySpec,
    #[serde(default)]
    pub capacities: Option<CapacitySpec>,
    #[serde(default)]
    pub init: InitSpec,
    #[serde(default)]
    pub run: RunSpec,
    #[serde(default)]
    pub ddo: Option<DdoSpec>,
    #[serde(default)]
    pub tuning: TuningSpec,
    #[serde(default)]
    pub sparsify: SparsifySpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GraphSpec {
    Explicit {
        n: usize,
        edges: Vec<[usize; 2]>,
    },
    ErdosRenyi {
        n: usize,
        prob: f64,
        #[serde(default)]
        seed: u64,
    },
    Ring {
        n: usize,
    },
    Line {
        n: usize,
    },
    Star {
        n: usize,
    },
    Grid {
        rows: usize,
        cols: usize,
    },
    Complete {
        n: usize,
    },
}

impl GraphSpec {
    pub fn build(&self) -> Result<Graph> {
        let (kind, seed) = match *self {
            GraphSpec::Explicit { n, ref edges } => return Graph::new(n, edges.iter().map(|e| (e[0], e[1]))),
            GraphSpec::ErdosRenyi { n, prob, seed } => (GraphKind::ErdosRenyi { n, prob }, seed),
            GraphSpec::Ring { n } => (GraphKind::Ring { n }, 0),
            GraphSpec::Line { n } => (GraphKind::Line { n }, 0),
            GraphSpec::Star { n } => (GraphKind::Star { n }, 0),
            GraphSpec::Grid { rows, cols } => (GraphKind::Grid { rows, cols }, 0),
            GraphSpec::Complete { n } => (GraphKind::Complete { n }, 0),
        };
        gen_graph(&kind, seed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DelaySpec {
    Explicit {
        comm: Vec<f64>,
        #[serde(default)]
        comp: Option<Vec<f64>>,
    },
    Uniform {
        tau: f64,
        #[serde(default)]
        comp: f64,
    },
    Mixture {
        values: Vec<f64>,
        probs: Vec<f64>,
        #[serde(default)]
        seed: u64,
        #[serde(default)]
        comp: f64,
    },
}

impl DelaySpec {
    pub fn build(&self, graph: &Graph) -> Result<DelayProfile> {
        let n = graph.node_count();
        match self {
            DelaySpec::Explicit { comm, comp } => {
                DelayProfile::new(graph, comm.clone(), comp.clone().unwrap_or_else(|| vec![0.0; n]))
            }
            DelaySpec::Uniform { tau, comp } => DelayProfile::new(graph, vec![*tau; graph.edge_count()], vec![*comp; n]),
            DelaySpec::Mixture { values, probs, seed, comp } => {
                let mix = DelayMixture::new(values.clone(), probs.clone(), *seed)?;
                DelayProfile::new(graph, mix.sample(graph.edge_count()), vec![*comp; n])
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum IntensityRule {
    /// `p = 1/tau`, with rate 1 for clocks of zero delay.
    #[default]
    #[serde(rename = "1/tau")]
    InverseDelay,
    /// `1/tau` scaled down until every capacity condition holds.
    #[serde(rename = "max_capacity")]
    MaxCapacity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum IntensitySpec {
    Rule(IntensityRule),
    Explicit {
        edge: Vec<f64>,
        #[serde(default)]
        comp: Option<Vec<f64>>,
    },
}

impl Default for IntensitySpec {
    fn default() -> Self {
        IntensitySpec::Rule(IntensityRule::InverseDelay)
    }
}

/// Uniform caps on sliding-window counts; omitted entries are unbounded.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CapacitySpec {
    #[serde(default)]
    pub edge: Option<u32>,
    #[serde(default)]
    pub comm: Option<u32>,
    #[serde(default)]
    pub comp: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitSpec {
    /// Independent standard normal entries drawn from the run seed.
    Gaussian {
        #[serde(default = "one")]
        dim: usize,
    },
    Explicit {
        values: Vec<Vec<f64>>,
    },
    Consensus {
        #[serde(default = "one")]
        dim: usize,
        #[serde(default)]
        value: f64,
    },
}

impl Default for InitSpec {
    fn default() -> Self {
        InitSpec::Gaussian { dim: 1 }
    }
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    Oracle,
    Protocol,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SeedSpec {
    Count(u64),
    List(Vec<u64>),
}

impl SeedSpec {
    pub fn seeds(&self) -> Vec<u64> {
        match self {
            SeedSpec::Count(n) => (0..*n).collect(),
            SeedSpec::List(v) => v.clone(),
        }
    }

    /// Parses `"5"` as five seeds `0..5` and `"1,4,9"` as a list.
    pub fn parse(s: &str) -> Result<Self> {
        let bad = |_| Error::config(format!("cannot parse seeds from {s:?}"));
        if s.contains(',') {
            s.split(',').map(|p| p.trim().parse::<u64>().map_err(bad)).collect::<Result<_>>().map(SeedSpec::List)
        } else {
            s.trim().parse::<u64>().map(SeedSpec::Count).map_err(bad)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSpec {
    /// Absolute horizon.
    #[serde(default)]
    pub horizon: Option<f64>,
    /// Horizon in units of `1/gamma` of the tuned method.
    #[serde(default)]
    pub horizon_gamma: Option<f64>,
    /// Number of uniform sample times in `[0, horizon]` (both ends included).
    #[serde(default = "default_samples")]
    pub samples: usize,
    #[serde(default)]
    pub sample_times: Option<Vec<f64>>,
    #[serde(default)]
    pub mode: Mode,
    #[serde(default)]
    pub tau_ping: f64,
    #[serde(default)]
    pub max_events: Option<u64>,
    #[serde(default = "default_seeds")]
    pub seeds: SeedSpec,
    #[serde(default)]
    pub semantics: CountSemantics,
    /// Grid step of the ODE integrator; chosen automatically if absent.
    #[serde(default)]
    pub dt: Option<f64>,
}

fn default_samples() -> usize {
    51
}

fn default_seeds() -> SeedSpec {
    SeedSpec::Count(1)
}

impl Default for RunSpec {
    fn default() -> Self {
        RunSpec {
            horizon: None,
            horizon_gamma: None,
            samples: default_samples(),
            sample_times: None,
            mode: Mode::Oracle,
            tau_ping: 0.0,
            max_events: None,
            seeds: default_seeds(),
            semantics: CountSemantics::Accepted,
            dt: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DdoSpec {
    pub sigma: f64,
    pub l: f64,
    pub locals: LocalsSpec,
    #[serde(default)]
    pub scaling: DdoScaling,
    #[serde(default)]
    pub halve_gossip: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LocalsSpec {
    /// `a_i ~ U[sigma, L]`, `c_i ~ N(0, I)`.
    Random {
        #[serde(default = "one")]
        dim: usize,
        #[serde(default)]
        seed: u64,
    },
    /// One `(a, c)` pair per node.
    Quadratic { a: Vec<f64>, c: Vec<Vec<f64>> },
    /// The same `(a, c)` on every node.
    Shared { a: f64, c: Vec<f64> },
}

impl LocalsSpec {
    pub fn build(&self, n: usize, sigma: f64, l: f64) -> Result<Vec<QuadraticLocal>> {
        match self {
            LocalsSpec::Random { dim, seed } => gen_quadratics(n, *dim, sigma, l, *seed),
            LocalsSpec::Quadratic { a, c } => {
                if a.len() != n || c.len() != n {
                    return Err(Error::config(format!("expected {n} local functions")));
                }
                a.iter().zip(c).map(|(a, c)| QuadraticLocal::new(*a, c.clone())).collect()
            }
            LocalsSpec::Shared { a, c } => (0..n).map(|_| QuadraticLocal::new(*a, c.clone())).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TuningSpec {
    /// Multiplies every tuned step size.
    #[serde(default = "unit")]
    pub k_scale: f64,
    /// Replaces the certified rate.
    #[serde(default)]
    pub gamma: Option<f64>,
}

fn unit() -> f64 {
    1.0
}

impl Default for TuningSpec {
    fn default() -> Self {
        TuningSpec { k_scale: 1.0, gamma: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SparsifySpec {
    /// Penalty weight; the balanced default is used when absent.
    #[serde(default)]
    pub omega: Option<f64>,
    #[serde(default = "default_iters")]
    pub iters: usize,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_threshold")]
    pub threshold: f64,
}

fn default_iters() -> usize {
    300
}

fn default_tol() -> f64 {
    1e-8
}

fn default_threshold() -> f64 {
    crate::sparsify::PRUNE_THRESHOLD
}

impl Default for SparsifySpec {
    fn default() -> Self {
        SparsifySpec { omega: None, iters: default_iters(), tol: default_tol(), threshold: default_threshold() }
    }
}

impl ExperimentConfig {
    /// Parses and validates a TOML document. Errors carry the offending
    /// line and key.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let config: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn from_path(path: &std::path::Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("configurations always serialize")
    }

    pub fn validate(&self) -> Result<()> {
        let run = &self.run;
        match (run.horizon, run.horizon_gamma) {
            (Some(h), None) if h > 0.0 && h.is_finite() => {}
            (None, Some(h)) if h > 0.0 && h.is_finite() => {}
            (None, None) if self.algorithm == Algorithm::Sparsify => {}
            _ => return Err(Error::config("run: set exactly one positive `horizon` or `horizon_gamma`")),
        }
        if run.samples < 2 && run.sample_times.is_none() {
            return Err(Error::config("run.samples must be at least 2"));
        }
        if run.seeds.seeds().is_empty() {
            return Err(Error::config("run.seeds is empty"));
        }
        if self.algorithm == Algorithm::Ddo && self.ddo.is_none() {
            return Err(Error::config("algorithm `ddo` needs a [ddo] table"));
        }
        if self.algorithm != Algorithm::Gossip && run.mode == Mode::Protocol {
            return Err(Error::config("protocol mode is only available for gossip"));
        }
        if !(self.tuning.k_scale > 0.0 && self.tuning.k_scale.is_finite()) {
            return Err(Error::config("tuning.k_scale must be positive"));
        }
        if let InitSpec::Gaussian { dim: 0 } | InitSpec::Consensus { dim: 0, .. } = self.init {
            return Err(Error::config("init.dim must be positive"));
        }
        Ok(())
    }

    /// Graph, delays, intensities and caps.
    pub fn network(&self) -> Result<NetworkSpec> {
        let graph = self.graph.build()?;
        let delays = self.delays.build(&graph)?;
        let caps = match self.capacities {
            Some(c) => CapacityProfile::uniform(&graph, c.edge, c.comm, c.comp),
            None => CapacityProfile::unbounded(&graph),
        };
        let intensities = match &self.intensities {
            IntensitySpec::Rule(IntensityRule::InverseDelay) => Intensities::inverse_delay(&delays, 1.0),
            IntensitySpec::Rule(IntensityRule::MaxCapacity) => max_capacity_intensities(&graph, &delays, &caps, 1.0)?,
            IntensitySpec::Explicit { edge, comp } => Intensities {
                edge: edge.clone(),
                comp: comp.clone().unwrap_or_else(|| Intensities::inverse_delay(&delays, 1.0).comp),
            },
        };
        NetworkSpec::new(graph, delays, intensities, caps)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
algorithm = "gossip"
graph = { kind = "ring", n = 5 }
delays = { kind = "uniform", tau = 0.5 }
run = { horizon = 10.0, seeds = 3 }
"#;

    #[test]
    fn minimal_config_uses_defaults() {
        let c = ExperimentConfig::from_toml_str(MINIMAL).unwrap();
        assert_eq!(c.intensities, IntensitySpec::Rule(IntensityRule::InverseDelay));
        assert_eq!(c.run.seeds.seeds(), vec![0, 1, 2]);
        let net = c.network().unwrap();
        assert_eq!(net.intensities.edge, vec![2.0; 5]);
        let again = ExperimentConfig::from_toml_str(&c.to_toml_string()).unwrap();
        assert_eq!(again, c);
    }

    #[test]
    fn unknown_keys_are_rejected_with_location() {
        let text = format!("{MINIMAL}\nbogus = 1\n");
        let err = ExperimentConfig::from_toml_str(&text).unwrap_err().to_string();
        assert!(err.contains("bogus") && err.contains("line"), "{err}");
        let text = MINIMAL.replace("tau = 0.5", "tau = 0.5, jitter = 2");
        assert!(ExperimentConfig::from_toml_str(&text).is_err());
    }

    #[test]
    fn horizon_must_be_given_once() {
        let text = MINIMAL.replace("horizon = 10.0", "horizon = 10.0, horizon_gamma = 5.0");
        assert!(ExperimentConfig::from_toml_str(&text).is_err());
        let text = MINIMAL.replace("horizon = 10.0, ", "");
        assert!(ExperimentConfig::from_toml_str(&text).is_err());
    }

    #[test]
    fn explicit_intensities_and_seed_lists() {
        let text = MINIMAL
            .replace("run = { horizon = 10.0, seeds = 3 }", "run = { horizon = 10.0, seeds = [4, 7] }")
            + "intensities = { edge = [1.0, 2.0, 3.0, 4.0, 5.0] }\n";
        let c = ExperimentConfig::from_toml_str(&text).unwrap();
        assert_eq!(c.run.seeds.seeds(), vec![4, 7]);
        assert_eq!(c.network().unwrap().intensities.edge, vec![1.0, 2.0, 3.0, 4.0, 5.0]);
        assert_eq!(SeedSpec::parse("1, 2,3").unwrap().seeds(), vec![1, 2, 3]);
        assert_eq!(SeedSpec::parse("2").unwrap().seeds(), vec![0, 1]);
        assert!(SeedSpec::parse("x").is_err());
    }

    #[test]
    fn ddo_requires_its_table() {
        let text = MINIMAL.replace("\"gossip\"", "\"ddo\"");
        assert!(ExperimentConfig::from_toml_str(&text).is_err());
        let text = format!("{text}\n[ddo]\nsigma = 1.0\nl = 10.0\nlocals = {{ kind = \"random\", dim = 2 }}\n");
        let c = ExperimentConfig::from_toml_str(&text).unwrap();
        let ddo = c.ddo.as_ref().unwrap();
        assert_eq!(ddo.locals.build(5, ddo.sigma, ddo.l).unwrap().len(), 5);
    }
}
