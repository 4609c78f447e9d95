//! Undirected communication graphs, weighted Laplacians and the spectral
//! quantities the tuner and the sparsifier are built on.
//!
//! Edges are stored once, in canonical `(min, max)` order, and addressed by
//! their index in [`Graph::edges`]. Every per-edge quantity in the crate
//! (delays, intensities, step sizes, weights) is a `Vec<f64>` indexed the
//! same way.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap};

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Canonical undirected edge, `a < b`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Edge {
    pub a: usize,
    pub b: usize,
}

impl Edge {
    pub fn new(i: usize, j: usize) -> Self {
        Edge { a: i.min(j), b: i.max(j) }
    }

    pub fn touches(&self, node: usize) -> bool {
        self.a == node || self.b == node
    }

    pub fn shares_node(&self, other: &Edge) -> bool {
        self.touches(other.a) || self.touches(other.b)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    n: usize,
    edges: Vec<Edge>,
    incident: Vec<Vec<usize>>,
    index: HashMap<Edge, usize>,
}

impl Graph {
    /// Builds a connected graph on `n >= 2` nodes. Duplicate edges are
    /// merged; self-loops and out-of-range endpoints are rejected.
    pub fn new(n: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let g = Self::build(n, edges)?;
        if n < 2 || !g.is_connected() {
            return Err(Error::Disconnected);
        }
        Ok(g)
    }

    /// Same as [`Graph::new`] without the connectivity requirement. Used for
    /// intermediate results (pruning candidates) and for tests on disjoint
    /// unions.
    pub fn new_unchecked(n: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        Self::build(n, edges)
    }

    fn build(n: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let mut list = Vec::new();
        let mut index = HashMap::new();
        let mut incident = vec![Vec::new(); n];
        for (i, j) in edges {
            if i == j {
                return Err(Error::invalid(format!("self-loop at node {i}")));
            }
            if i >= n || j >= n {
                return Err(Error::invalid(format!("edge ({i}, {j}) out of range for {n} nodes")));
            }
            let e = Edge::new(i, j);
            if index.contains_key(&e) {
                continue;
            }
            let k = list.len();
            index.insert(e, k);
            incident[e.a].push(k);
            incident[e.b].push(k);
            list.push(e);
        }
        Ok(Graph { n, edges: list, incident, index })
    }

    pub fn node_count(&self) -> usize {
        self.n
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn edge(&self, k: usize) -> Edge {
        self.edges[k]
    }

    /// Indices of the edges incident to `node`.
    pub fn incident(&self, node: usize) -> &[usize] {
        &self.incident[node]
    }

    pub fn degree(&self, node: usize) -> usize {
        self.incident[node].len()
    }

    pub fn edge_index(&self, i: usize, j: usize) -> Result<usize> {
        self.index.get(&Edge::new(i, j)).copied().ok_or(Error::UnknownEdge(i, j))
    }

    pub fn neighbors(&self, node: usize) -> impl Iterator<Item = usize> + '_ {
        self.incident[node].iter().map(move |&k| {
            let e = self.edges[k];
            if e.a == node {
                e.b
            } else {
                e.a
            }
        })
    }

    pub fn is_connected(&self) -> bool {
        self.components() <= 1
    }

    /// Number of connected components (isolated nodes count).
    pub fn components(&self) -> usize {
        let mut seen = vec![false; self.n];
        let mut count = 0;
        let mut stack = Vec::new();
        for start in 0..self.n {
            if seen[start] {
                continue;
            }
            count += 1;
            seen[start] = true;
            stack.push(start);
            while let Some(u) = stack.pop() {
                for v in self.neighbors(u) {
                    if !seen[v] {
                        seen[v] = true;
                        stack.push(v);
                    }
                }
            }
        }
        count
    }

    /// Graph restricted to the edges for which `keep` holds. Returns the new
    /// graph (not checked for connectivity) and the retained edge indices.
    pub fn filter_edges(&self, mut keep: impl FnMut(usize) -> bool) -> (Graph, Vec<usize>) {
        let kept: Vec<usize> = (0..self.edge_count()).filter(|&k| keep(k)).collect();
        let g = Graph::build(self.n, kept.iter().map(|&k| (self.edges[k].a, self.edges[k].b)))
            .expect("subgraph of a valid graph is valid");
        (g, kept)
    }
}

/// Upper bounds on communication and computation delays.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DelayProfile {
    /// tau_ij per edge.
    pub comm: Vec<f64>,
    /// tau_i^comp per node.
    pub comp: Vec<f64>,
    /// tau_i^comm = max over incident edges, derived.
    pub comm_node: Vec<f64>,
}

impl DelayProfile {
    pub fn new(graph: &Graph, comm: Vec<f64>, comp: Vec<f64>) -> Result<Self> {
        if comm.len() != graph.edge_count() {
            return Err(Error::config(format!(
                "expected {} edge delays, got {}",
                graph.edge_count(),
                comm.len()
            )));
        }
        if comp.len() != graph.node_count() {
            return Err(Error::config(format!(
                "expected {} computation delays, got {}",
                graph.node_count(),
                comp.len()
            )));
        }
        if let Some(bad) = comm.iter().chain(&comp).find(|t| !(t.is_finite() && **t >= 0.0)) {
            return Err(Error::invalid(format!("delay {bad} is not a finite nonnegative number")));
        }
        let comm_node = (0..graph.node_count())
            .map(|i| graph.incident(i).iter().map(|&k| comm[k]).fold(0.0, f64::max))
            .collect();
        Ok(DelayProfile { comm, comp, comm_node })
    }

    /// Communication-only profile, zero computation delays.
    pub fn comm_only(graph: &Graph, comm: Vec<f64>) -> Result<Self> {
        Self::new(graph, comm, vec![0.0; graph.node_count()])
    }

    pub fn uniform(graph: &Graph, tau: f64) -> Result<Self> {
        Self::comm_only(graph, vec![tau; graph.edge_count()])
    }

    pub fn max_comm(&self) -> f64 {
        self.comm.iter().copied().fold(0.0, f64::max)
    }

    pub fn max_comp(&self) -> f64 {
        self.comp.iter().copied().fold(0.0, f64::max)
    }

    /// Largest delay over edges and computation units.
    pub fn max_overall(&self) -> f64 {
        self.max_comm().max(self.max_comp())
    }

    /// Same profile with every delay multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        DelayProfile {
            comm: self.comm.iter().map(|t| t * factor).collect(),
            comp: self.comp.iter().map(|t| t * factor).collect(),
            comm_node: self.comm_node.iter().map(|t| t * factor).collect(),
        }
    }
}

/// Nonnegative per-edge weights.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeWeights(Vec<f64>);

impl EdgeWeights {
    pub fn new(w: Vec<f64>) -> Result<Self> {
        if let Some(bad) = w.iter().find(|x| !(x.is_finite() && **x >= 0.0)) {
            return Err(Error::invalid(format!("edge weight {bad} is not finite and nonnegative")));
        }
        Ok(EdgeWeights(w))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl From<EdgeWeights> for Vec<f64> {
    fn from(w: EdgeWeights) -> Self {
        w.0
    }
}

/// Weighted Laplacian: off-diagonal `-w_ij` on edges, diagonal the weighted degree.
pub fn laplacian(graph: &Graph, weights: &[f64]) -> Result<DMatrix<f64>> {
    if weights.len() != graph.edge_count() {
        return Err(Error::config(format!(
            "expected {} edge weights, got {}",
            graph.edge_count(),
            weights.len()
        )));
    }
    let n = graph.node_count();
    let mut l = DMatrix::zeros(n, n);
    for (e, &w) in graph.edges().iter().zip(weights) {
        l[(e.a, e.b)] -= w;
        l[(e.b, e.a)] -= w;
        l[(e.a, e.a)] += w;
        l[(e.b, e.b)] += w;
    }
    Ok(l)
}

pub(crate) fn sorted_spectrum(m: DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let eig = SymmetricEigen::new(m);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let vectors = DMatrix::from_columns(
        &order.iter().map(|&k| eig.eigenvectors.column(k).into_owned()).collect::<Vec<_>>(),
    );
    (values, vectors)
}

/// Eigenvalues of the weighted Laplacian, ascending.
pub fn laplacian_spectrum(graph: &Graph, weights: &[f64]) -> Result<Vec<f64>> {
    let l = laplacian(graph, weights)?;
    let mut values: Vec<f64> = SymmetricEigen::new(l).eigenvalues.iter().copied().collect();
    values.sort_by(f64::total_cmp);
    Ok(values)
}

/// Algebraic connectivity: second-smallest Laplacian eigenvalue, tiny
/// negatives clamped to zero.
pub fn lambda2(graph: &Graph, weights: &[f64]) -> Result<f64> {
    let spectrum = laplacian_spectrum(graph, weights)?;
    Ok(spectrum.get(1).copied().unwrap_or(0.0).max(0.0))
}

/// Largest Laplacian eigenvalue (the Laplacian is PSD, so this is its
/// spectral radius).
pub fn spectral_radius(graph: &Graph, weights: &[f64]) -> Result<f64> {
    let spectrum = laplacian_spectrum(graph, weights)?;
    Ok(spectrum.last().copied().unwrap_or(0.0).max(0.0))
}

/// Second eigenpair of the weighted Laplacian.
#[derive(Debug, Clone)]
pub struct Fiedler {
    pub lambda2: f64,
    /// Third eigenvalue (`+inf` for two-node graphs); used to detect
    /// multiplicity.
    pub lambda3: f64,
    pub vector: DVector<f64>,
}

impl Fiedler {
    pub fn gap(&self) -> f64 {
        self.lambda3 - self.lambda2
    }
}

pub fn fiedler(graph: &Graph, weights: &[f64]) -> Result<Fiedler> {
    if graph.node_count() < 2 {
        return Err(Error::invalid("Fiedler vector needs at least two nodes"));
    }
    let (values, vectors) = sorted_spectrum(laplacian(graph, weights)?);
    Ok(Fiedler {
        lambda2: values[1].max(0.0),
        lambda3: values.get(2).copied().unwrap_or(f64::INFINITY),
        vector: vectors.column(1).into_owned(),
    })
}

/// Edges sharing at least one endpoint with edge `e`, including `e` itself,
/// in increasing index order.
pub fn edge_neighbors(graph: &Graph, e: usize) -> Result<Vec<usize>> {
    if e >= graph.edge_count() {
        return Err(Error::invalid(format!("edge index {e} out of range")));
    }
    let edge = graph.edge(e);
    let mut out: Vec<usize> = graph
        .incident(edge.a)
        .iter()
        .chain(graph.incident(edge.b))
        .copied()
        .collect();
    out.sort_unstable();
    out.dedup();
    Ok(out)
}

/// Edge-neighbor lists for every edge.
pub fn all_edge_neighbors(graph: &Graph) -> Vec<Vec<usize>> {
    (0..graph.edge_count())
        .map(|e| edge_neighbors(graph, e).expect("index in range"))
        .collect()
}

#[derive(PartialEq)]
struct HeapEntry {
    dist: f64,
    node: usize,
}

impl Eq for HeapEntry {}

impl Ord for HeapEntry {
    fn cmp(&self, other: &Self) -> Ordering {
        other.dist.total_cmp(&self.dist).then(other.node.cmp(&self.node))
    }
}

impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Shortest-path distances (edge weights = communication delays) from `source`.
pub fn delay_distances(graph: &Graph, delays: &DelayProfile, source: usize) -> Vec<f64> {
    let mut dist = vec![f64::INFINITY; graph.node_count()];
    let mut heap = BinaryHeap::new();
    dist[source] = 0.0;
    heap.push(HeapEntry { dist: 0.0, node: source });
    while let Some(HeapEntry { dist: d, node: u }) = heap.pop() {
        if d > dist[u] {
            continue;
        }
        for &k in graph.incident(u) {
            let e = graph.edge(k);
            let v = if e.a == u { e.b } else { e.a };
            let nd = d + delays.comm[k];
            if nd < dist[v] {
                dist[v] = nd;
                heap.push(HeapEntry { dist: nd, node: v });
            }
        }
    }
    dist
}

/// Time distance between two nodes: both computation delays plus the
/// delay-weighted shortest path.
pub fn time_distance(graph: &Graph, delays: &DelayProfile, i: usize, j: usize) -> Result<f64> {
    let d = delay_distances(graph, delays, i)[j];
    if !d.is_finite() {
        return Err(Error::Disconnected);
    }
    Ok(delays.comp[i] + delays.comp[j] + d)
}

/// Diameter of the graph for the time distance, over all ordered node pairs.
pub fn time_diameter(graph: &Graph, delays: &DelayProfile) -> Result<f64> {
    let mut best: f64 = 0.0;
    for i in 0..graph.node_count() {
        let dist = delay_distances(graph, delays, i);
        for (j, d) in dist.iter().enumerate() {
            if !d.is_finite() {
                return Err(Error::Disconnected);
            }
            best = best.max(delays.comp[i] + delays.comp[j] + d);
        }
    }
    Ok(best)
}

/// Communication graph plus one virtual computation node `n + i` per
/// physical node `i`, joined by the virtual edge `(i, n + i)`.
#[derive(Debug, Clone)]
pub struct AugmentedGraph {
    pub base: Graph,
    pub graph: Graph,
    /// Delays on the augmented edges: base edges keep tau_ij, virtual edges
    /// carry tau_i^comp.
    pub delays: Vec<f64>,
}

impl AugmentedGraph {
    pub fn virtual_node(&self, i: usize) -> usize {
        self.base.node_count() + i
    }

    /// Index of the virtual edge `(i, i^comp)` in the augmented graph.
    pub fn virtual_edge(&self, i: usize) -> usize {
        self.base.edge_count() + i
    }

    /// Index in the augmented graph of base edge `k` (identity by construction).
    pub fn base_edge(&self, k: usize) -> usize {
        k
    }
}

pub fn augment(graph: &Graph, delays: &DelayProfile) -> Result<AugmentedGraph> {
    let n = graph.node_count();
    let edges = graph
        .edges()
        .iter()
        .map(|e| (e.a, e.b))
        .chain((0..n).map(|i| (i, n + i)))
        .collect::<Vec<_>>();
    let aug = Graph::new(2 * n, edges)?;
    let mut tau = delays.comm.clone();
    tau.extend_from_slice(&delays.comp);
    Ok(AugmentedGraph { base: graph.clone(), graph: aug, delays: tau })
}
