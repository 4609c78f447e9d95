//! A network instance: topology, delay bounds, activation intensities and
//! capacity limits, validated together.

use crate::error::{Error, Result};
use crate::graph::{DelayProfile, Graph};
use crate::ppp::CapacityProfile;

/// Poisson intensities of the edge clocks and of the computation clocks.
#[derive(Debug, Clone, PartialEq)]
pub struct Intensities {
    pub edge: Vec<f64>,
    pub comp: Vec<f64>,
}

impl Intensities {
    /// `p_ij = 1/tau_ij`, `p_i^comp = 1/tau_i^comp`; `fallback` replaces
    /// the rate of any clock whose delay is zero.
    pub fn inverse_delay(delays: &DelayProfile, fallback: f64) -> Self {
        let inv = |t: f64| if t > 0.0 { 1.0 / t } else { fallback };
        Intensities {
            edge: delays.comm.iter().copied().map(inv).collect(),
            comp: delays.comp.iter().copied().map(inv).collect(),
        }
    }

    pub fn total_edge_rate(&self) -> f64 {
        self.edge.iter().sum()
    }
}

#[derive(Debug, Clone)]
pub struct NetworkSpec {
    pub graph: Graph,
    pub delays: DelayProfile,
    pub intensities: Intensities,
    pub caps: CapacityProfile,
}

impl NetworkSpec {
    pub fn new(
        graph: Graph,
        delays: DelayProfile,
        intensities: Intensities,
        caps: CapacityProfile,
    ) -> Result<Self> {
        let (m, n) = (graph.edge_count(), graph.node_count());
        if delays.comm.len() != m || delays.comp.len() != n {
            return Err(Error::config("delay profile does not match the graph"));
        }
        if intensities.edge.len() != m || intensities.comp.len() != n {
            return Err(Error::config(format!(
                "expected {m} edge and {n} computation intensities, got {} and {}",
                intensities.edge.len(),
                intensities.comp.len()
            )));
        }
        if let Some(p) = intensities
            .edge
            .iter()
            .chain(&intensities.comp)
            .find(|p| !(p.is_finite() && **p >= 0.0))
        {
            return Err(Error::invalid(format!("intensity {p} is not finite and nonnegative")));
        }
        caps.validate(&graph)?;
        Ok(NetworkSpec { graph, delays, intensities, caps })
    }

    /// Network with `p = 1/tau`, no capacity limits.
    pub fn with_default_intensities(graph: Graph, delays: DelayProfile) -> Result<Self> {
        let intensities = Intensities::inverse_delay(&delays, 1.0);
        let caps = CapacityProfile::unbounded(&graph);
        Self::new(graph, delays, intensities, caps)
    }

    pub fn node_count(&self) -> usize {
        self.graph.node_count()
    }

    pub fn edge_count(&self) -> usize {
        self.graph.edge_count()
    }
}
