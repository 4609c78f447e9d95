//! Graph, delay and objective generators shared by tests, presets and the
//! command line.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Graph;

pub use crate::ddo::gen_quadratics;

/// Rejection budget for connected Erdős-Rényi samples.
pub const ER_MAX_TRIES: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GraphKind {
    ErdosRenyi { n: usize, prob: f64 },
    Ring { n: usize },
    Line { n: usize },
    Star { n: usize },
    Grid { rows: usize, cols: usize },
    Complete { n: usize },
}

/// Samples a connected graph. Only the Erdős-Rényi family uses the seed.
pub fn gen_graph(kind: &GraphKind, seed: u64) -> Result<Graph> {
    match *kind {
        GraphKind::ErdosRenyi { n, prob } => {
            if !(0.0..=1.0).contains(&prob) {
                return Err(Error::invalid(format!("edge probability {prob} outside [0, 1]")));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for _ in 0..ER_MAX_TRIES {
                let edges: Vec<(usize, usize)> = (0..n)
                    .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
                    .filter(|_| rng.random_bool(prob))
                    .collect();
                if let Ok(g) = Graph::new(n, edges) {
                    return Ok(g);
                }
            }
            Err(Error::Disconnected)
        }
        GraphKind::Ring { n } => {
            if n < 3 {
                return Err(Error::invalid("a ring needs at least 3 nodes"));
            }
            Graph::new(n, (0..n).map(|i| (i, (i + 1) % n)))
        }
        GraphKind::Line { n } => Graph::new(n, (1..n).map(|i| (i - 1, i))),
        GraphKind::Star { n } => Graph::new(n, (1..n).map(|i| (0, i))),
        GraphKind::Grid { rows, cols } => {
            let id = |r: usize, c: usize| r * cols + c;
            let mut edges = Vec::new();
            for r in 0..rows {
                for c in 0..cols {
                    if c + 1 < cols {
                        edges.push((id(r, c), id(r, c + 1)));
                    }
                    if r + 1 < rows {
                        edges.push((id(r, c), id(r + 1, c)));
                    }
                }
            }
            Graph::new(rows * cols, edges)
        }
        GraphKind::Complete { n } => Graph::new(n, (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j)))),
    }
}

/// Independent per-edge delays drawn from a finite distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DelayMixture {
    pub values: Vec<f64>,
    pub probs: Vec<f64>,
    pub seed: u64,
}

impl DelayMixture {
    pub fn new(values: Vec<f64>, probs: Vec<f64>, seed: u64) -> Result<Self> {
        let mixture = DelayMixture { values, probs, seed };
        mixture.validate()?;
        Ok(mixture)
    }

    pub fn validate(&self) -> Result<()> {
        if self.values.is_empty() || self.values.len() != self.probs.len() {
            return Err(Error::config("delay mixture needs as many probabilities as values"));
        }
        if let Some(v) = self.values.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
            return Err(Error::invalid(format!("mixture delays must be positive, got {v}")));
        }
        if self.probs.iter().any(|p| !(*p >= 0.0)) || (self.probs.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
            return Err(Error::invalid("mixture probabilities must be nonnegative and sum to 1"));
        }
        Ok(())
    }

    /// One delay per edge, in edge order.
    pub fn sample(&self, edges: usize) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        (0..edges)
            .map(|_| {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                for (v, p) in self.values.iter().zip(&self.probs) {
                    acc += p;
                    if u < acc {
                        return *v;
                    }
                }
                *self.values.last().expect("validated")
            })
            .collect()
    }
}
