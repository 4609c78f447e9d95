//! Simulation and tuning of asynchronous decentralized optimization over
//! networks with heterogeneous communication and computation delays.
//!
//! The crate covers delayed randomized gossip, delayed decentralized
//! optimization through a dual formulation, a generic continuized delayed
//! coordinate descent engine, step-size tuning with rate certificates,
//! the delayed mean-field ODE, spectral sparsification of the
//! communication graph, and a config-driven experiment runner.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod braess;
pub mod config;
pub mod ddo;
pub mod engine;
pub mod error;
pub mod experiment;
pub mod gossip;
pub mod graph;
pub mod network;
pub mod ode;
pub mod plot;
pub mod ppp;
pub mod presets;
pub mod problems;
pub mod sparsify;
pub mod traces;
pub mod tuning;

pub use error::{Error, Result};
pub use graph::{DelayProfile, Edge, Graph};
pub use network::{Intensities, NetworkSpec};
