//! Random comparison graphs: uniform spanning trees (Wilson's algorithm) and
//! uniform k-regular graphs (pairing model with rejection).

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{ExperimentModel, ExperimentSpec, ModelKind, ParameterBox};

/// Simple undirected graph on `vertices` objects; edges stored with `i < j`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComparisonGraph {
    pub vertices: usize,
    pub edges: Vec<(usize, usize)>,
}

impl ComparisonGraph {
    pub fn complete(vertices: usize) -> Self {
        let edges = (0..vertices).flat_map(|i| ((i + 1)..vertices).map(move |j| (i, j))).collect();
        ComparisonGraph { vertices, edges }
    }

    pub fn degrees(&self) -> Vec<usize> {
        let mut d = vec![0; self.vertices];
        for &(i, j) in &self.edges {
            d[i] += 1;
            d[j] += 1;
        }
        d
    }

    pub fn adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.vertices];
        for &(i, j) in &self.edges {
            adj[i].push(j);
            adj[j].push(i);
        }
        adj
    }

    pub fn is_connected(&self) -> bool {
        if self.vertices == 0 {
            return true;
        }
        let adj = self.adjacency();
        let mut seen = vec![false; self.vertices];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(u) = stack.pop() {
            for &v in &adj[u] {
                if !seen[v] {
                    seen[v] = true;
                    stack.push(v);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }

    /// BTL catalog with one experiment per edge, object 0 as reference.
    pub fn btl_model(&self, radius: f64) -> Result<ExperimentModel> {
        let p = self.vertices.saturating_sub(1);
        let specs = self.edges.iter().map(|&(i, j)| ExperimentSpec::Btl { i, j }).collect();
        ExperimentModel::instantiate(ModelKind::Btl, specs, ParameterBox::cube(p, radius)?)
    }
}

/// Graph family for synthetic BTL studies. Text form: `tree`, `regular:<k>`
/// or `complete`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GraphKind {
    SpanningTree,
    Regular(usize),
    Complete,
}

impl fmt::Display for GraphKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GraphKind::SpanningTree => f.write_str("tree"),
            GraphKind::Regular(k) => write!(f, "regular:{k}"),
            GraphKind::Complete => f.write_str("complete"),
        }
    }
}

impl FromStr for GraphKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "tree" => Ok(GraphKind::SpanningTree),
            "complete" => Ok(GraphKind::Complete),
            other => other
                .strip_prefix("regular:")
                .and_then(|k| k.parse().ok())
                .map(GraphKind::Regular)
                .ok_or_else(|| Error::InvalidArgument(format!("unknown graph kind `{other}`"))),
        }
    }
}

impl Serialize for GraphKind {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for GraphKind {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

/// Samples a graph on `p + 1` vertices.
pub fn gen_graph<R: Rng + ?Sized>(kind: GraphKind, p: usize, rng: &mut R) -> Result<ComparisonGraph> {
    let n = p + 1;
    match kind {
        GraphKind::SpanningTree => Ok(uniform_spanning_tree(&ComparisonGraph::complete(n), rng)),
        GraphKind::Regular(k) => random_regular(n, k, rng),
        GraphKind::Complete => Ok(ComparisonGraph::complete(n)),
    }
}

/// Uniform spanning tree of a connected graph by loop-erased random walks.
///
/// # Panics
/// If `graph` is disconnected.
pub fn uniform_spanning_tree<R: Rng + ?Sized>(graph: &ComparisonGraph, rng: &mut R) -> ComparisonGraph {
    let n = graph.vertices;
    let adj = graph.adjacency();
    assert!(graph.is_connected(), "spanning tree of a disconnected graph");
    let mut in_tree = vec![false; n];
    let mut next = vec![usize::MAX; n];
    let mut edges = Vec::with_capacity(n.saturating_sub(1));
    if n == 0 {
        return ComparisonGraph { vertices: 0, edges };
    }
    in_tree[rng.random_range(0..n)] = true;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    for start in order {
        let mut u = start;
        while !in_tree[u] {
            next[u] = adj[u][rng.random_range(0..adj[u].len())];
            u = next[u];
        }
        let mut u = start;
        while !in_tree[u] {
            in_tree[u] = true;
            let v = next[u];
            edges.push((u.min(v), u.max(v)));
            u = v;
        }
    }
    edges.sort_unstable();
    ComparisonGraph { vertices: n, edges }
}

const MAX_PAIRING_ATTEMPTS: usize = 1_000_000;

/// Uniform simple `k`-regular graph on `n` vertices.
///
/// Dense requests are served through the complement, which keeps rejection
/// rates manageable for `k > (n − 1)/2`.
pub fn random_regular<R: Rng + ?Sized>(n: usize, k: usize, rng: &mut R) -> Result<ComparisonGraph> {
    if n == 0 || k >= n || (n * k) % 2 == 1 {
        return Err(Error::InfeasibleDegree { k, vertices: n });
    }
    if 2 * k > n - 1 {
        let sparse = random_regular(n, n - 1 - k, rng)?;
        let present: BTreeSet<(usize, usize)> = sparse.edges.into_iter().collect();
        let edges = ComparisonGraph::complete(n).edges.into_iter().filter(|e| !present.contains(e)).collect();
        return Ok(ComparisonGraph { vertices: n, edges });
    }
    let mut points: Vec<usize> = (0..n).flat_map(|v| std::iter::repeat_n(v, k)).collect();
    'attempt: for _ in 0..MAX_PAIRING_ATTEMPTS {
        points.shuffle(rng);
        let mut edges = BTreeSet::new();
        for pair in points.chunks_exact(2) {
            let (i, j) = (pair[0].min(pair[1]), pair[0].max(pair[1]));
            if i == j || !edges.insert((i, j)) {
                continue 'attempt;
            }
        }
        return Ok(ComparisonGraph {
            vertices: n,
            edges: edges.into_iter().collect(),
        });
    }
    Err(Error::NonConvergence {
        iterations: MAX_PAIRING_ATTEMPTS,
        norm: f64::NAN,
    })
}
