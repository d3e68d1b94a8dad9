//! Communication graphs, mixing matrices and consensus constraint matrices.
//!
//! A [`NetworkGraph`] is an undirected connected graph over `N` agents. From it
//! we build a symmetric row-stochastic [`MixingMatrix`] `W` and the consensus
//! matrix `V = α(I − W)`, whose action on stacked agent vectors vanishes exactly
//! on the consensus subspace.

use std::collections::{BTreeSet, VecDeque};
use std::fmt::Write as _;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Undirected communication graph over agents `0..num_agents`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkGraph {
    num_agents: usize,
    /// Edges stored as `(i, j)` with `i < j`, sorted.
    edges: Vec<(usize, usize)>,
    neighbors: Vec<Vec<usize>>,
}

impl NetworkGraph {
    /// Builds a graph from an edge list, rejecting self-loops, duplicates,
    /// out-of-range endpoints and disconnected topologies.
    pub fn new(num_agents: usize, edges: &[(usize, usize)]) -> Result<Self> {
        if num_agents == 0 {
            return Err(Error::InvalidParameter("graph needs at least one agent".into()));
        }
        let mut set = BTreeSet::new();
        for &(a, b) in edges {
            if a >= num_agents || b >= num_agents {
                return Err(Error::InvalidParameter(format!(
                    "edge ({a}, {b}) out of range for {num_agents} agents"
                )));
            }
            if a == b {
                return Err(Error::InvalidParameter(format!("self-loop at agent {a}")));
            }
            if !set.insert((a.min(b), a.max(b))) {
                return Err(Error::InvalidParameter(format!("duplicate edge ({a}, {b})")));
            }
        }
        let edges: Vec<(usize, usize)> = set.into_iter().collect();
        let mut neighbors = vec![Vec::new(); num_agents];
        for &(a, b) in &edges {
            neighbors[a].push(b);
            neighbors[b].push(a);
        }
        for list in &mut neighbors {
            list.sort_unstable();
        }
        let graph = NetworkGraph {
            num_agents,
            edges,
            neighbors,
        };
        if !graph.is_connected() {
            return Err(Error::Disconnected);
        }
        Ok(graph)
    }

    pub fn num_agents(&self) -> usize {
        self.num_agents
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn neighbors(&self, agent: usize) -> &[usize] {
        &self.neighbors[agent]
    }

    pub fn degree(&self, agent: usize) -> usize {
        self.neighbors[agent].len()
    }

    /// Breadth-first reachability from agent 0.
    pub fn is_connected(&self) -> bool {
        let mut seen = vec![false; self.num_agents];
        let mut queue = VecDeque::from([0usize]);
        seen[0] = true;
        let mut count = 1;
        while let Some(u) = queue.pop_front() {
            for &v in &self.neighbors[u] {
                if !seen[v] {
                    seen[v] = true;
                    count += 1;
                    queue.push_back(v);
                }
            }
        }
        count == self.num_agents
    }

    /// Serializes to the edge-list text format: `"N M"` then one `"i j"` line per edge.
    pub fn to_edge_list(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{} {}", self.num_agents, self.edges.len());
        for &(a, b) in &self.edges {
            let _ = writeln!(out, "{a} {b}");
        }
        out
    }

    pub fn from_edge_list(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines
            .next()
            .ok_or_else(|| Error::Format("empty edge list".into()))?;
        let (n, m) = parse_pair(header, 1)?;
        let mut edges = Vec::with_capacity(m);
        for (lineno, line) in lines {
            edges.push(parse_pair(line, lineno + 1)?);
        }
        if edges.len() != m {
            return Err(Error::Format(format!(
                "edge list declares {m} edges but contains {}",
                edges.len()
            )));
        }
        NetworkGraph::new(n, &edges)
    }
}

fn parse_pair(line: &str, lineno: usize) -> Result<(usize, usize)> {
    let mut it = line.split_whitespace().map(str::parse::<usize>);
    match (it.next(), it.next(), it.next()) {
        (Some(Ok(a)), Some(Ok(b)), None) => Ok((a, b)),
        _ => Err(Error::Format(format!(
            "line {lineno}: expected two non-negative integers, got {line:?}"
        ))),
    }
}

/// Generates a small-world graph: the `num_agents`-cycle plus `extra_edges`
/// distinct chords drawn uniformly without replacement from the non-cycle pairs.
pub fn generate_small_world(num_agents: usize, extra_edges: usize, rng_seed: u64) -> Result<NetworkGraph> {
    if num_agents < 3 {
        return Err(Error::InvalidParameter(format!(
            "small-world graph needs at least 3 agents, got {num_agents}"
        )));
    }
    let n = num_agents;
    let available = n * (n - 1) / 2 - n;
    if extra_edges > available {
        return Err(Error::InvalidParameter(format!(
            "requested {extra_edges} extra edges but only {available} non-cycle pairs exist"
        )));
    }
    let is_cycle = |a: usize, b: usize| b == a + 1 || (a == 0 && b == n - 1);
    let candidates: Vec<(usize, usize)> = (0..n)
        .flat_map(|a| (a + 1..n).map(move |b| (a, b)))
        .filter(|&(a, b)| !is_cycle(a, b))
        .collect();
    debug_assert_eq!(candidates.len(), available);

    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut edges: Vec<(usize, usize)> = (0..n).map(|i| (i, (i + 1) % n)).collect();
    let mut picks = index::sample(&mut rng, candidates.len(), extra_edges).into_vec();
    picks.sort_unstable();
    edges.extend(picks.into_iter().map(|p| candidates[p]));
    NetworkGraph::new(n, &edges)
}

/// Rule used to turn a graph into a mixing matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MixingRule {
    #[default]
    Metropolis,
    Laplacian,
}

impl std::str::FromStr for MixingRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "metropolis" => Ok(MixingRule::Metropolis),
            "laplacian" => Ok(MixingRule::Laplacian),
            other => Err(Error::InvalidParameter(format!("unknown mixing rule {other:?}"))),
        }
    }
}

/// Dense symmetric row-stochastic weight matrix, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixingMatrix {
    size: usize,
    entries: Vec<f64>,
}

impl MixingMatrix {
    /// Wraps raw entries after checking every mixing-matrix invariant against `graph`.
    pub fn from_entries(graph: &NetworkGraph, entries: Vec<f64>) -> Result<Self> {
        let size = graph.num_agents();
        if entries.len() != size * size {
            return Err(Error::Dimension {
                expected: size * size,
                actual: entries.len(),
            });
        }
        let w = MixingMatrix { size, entries };
        w.validate(graph)?;
        Ok(w)
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.size + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.entries[i * self.size..(i + 1) * self.size]
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    fn validate(&self, graph: &NetworkGraph) -> Result<()> {
        let n = self.size;
        for i in 0..n {
            let row_sum: f64 = self.row(i).iter().sum();
            if (row_sum - 1.0).abs() > 1e-12 {
                return Err(Error::Invariant(format!("row {i} of W sums to {row_sum}")));
            }
            let nbrs = graph.neighbors(i);
            for j in 0..n {
                let w = self.get(i, j);
                if (w - self.get(j, i)).abs() > 1e-12 {
                    return Err(Error::Invariant(format!("W not symmetric at ({i}, {j})")));
                }
                if w < 0.0 {
                    return Err(Error::Invariant(format!("negative weight at ({i}, {j})")));
                }
                let linked = i == j || nbrs.binary_search(&j).is_ok();
                if linked != (w > 0.0) {
                    return Err(Error::Invariant(format!(
                        "support of W disagrees with graph at ({i}, {j})"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Metropolis weights: `w_ij = 1/(1 + max(deg_i, deg_j))` on edges, diagonal fills the row.
pub fn metropolis_weights(graph: &NetworkGraph) -> Result<MixingMatrix> {
    let n = graph.num_agents();
    let mut entries = vec![0.0; n * n];
    for &(a, b) in graph.edges() {
        let w = 1.0 / (1.0 + graph.degree(a).max(graph.degree(b)) as f64);
        entries[a * n + b] = w;
        entries[b * n + a] = w;
    }
    fill_diagonal(&mut entries, n);
    MixingMatrix::from_entries(graph, entries)
}

/// Laplacian weights `W = I − L/(d_max + 1)`; eigenvalues lie in `(−1, 1]`
/// because `λ_max(L) ≤ 2 d_max`.
pub fn laplacian_weights(graph: &NetworkGraph) -> Result<MixingMatrix> {
    let n = graph.num_agents();
    let d_max = (0..n).map(|i| graph.degree(i)).max().unwrap_or(0);
    let scale = 1.0 / (d_max as f64 + 1.0);
    let mut entries = vec![0.0; n * n];
    for &(a, b) in graph.edges() {
        entries[a * n + b] = scale;
        entries[b * n + a] = scale;
    }
    fill_diagonal(&mut entries, n);
    MixingMatrix::from_entries(graph, entries)
}

pub fn mixing_matrix(graph: &NetworkGraph, rule: MixingRule) -> Result<MixingMatrix> {
    match rule {
        MixingRule::Metropolis => metropolis_weights(graph),
        MixingRule::Laplacian => laplacian_weights(graph),
    }
}

fn fill_diagonal(entries: &mut [f64], n: usize) {
    for i in 0..n {
        let off: f64 = (0..n).filter(|&j| j != i).map(|j| entries[i * n + j]).sum();
        entries[i * n + i] = 1.0 - off;
    }
}

/// Consensus constraint matrix `V = α(I − W)` with per-row bounds `δ_i = 2α(1 − w_ii)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsensusMatrix {
    alpha: f64,
    size: usize,
    entries: Vec<f64>,
    delta: Vec<f64>,
    /// Off-diagonal support of each row, sorted.
    neighbors: Vec<Vec<usize>>,
}

impl ConsensusMatrix {
    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.size + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.entries[i * self.size..(i + 1) * self.size]
    }

    pub fn delta(&self, i: usize) -> f64 {
        self.delta[i]
    }

    pub fn deltas(&self) -> &[f64] {
        &self.delta
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i]
    }

    /// False for the single-agent case, where `V = 0` and the consensus
    /// multipliers never move.
    pub fn lambda_updates_enabled(&self) -> bool {
        self.size > 1
    }

    /// Applies `V ⊗ I_dim` to a stacked vector of `size` blocks.
    pub fn apply_stacked(&self, x: &[f64], dim: usize) -> Vec<f64> {
        assert_eq!(x.len(), self.size * dim, "stacked vector has wrong length");
        let mut out = vec![0.0; x.len()];
        for i in 0..self.size {
            let block = &mut out[i * dim..(i + 1) * dim];
            for j in std::iter::once(i).chain(self.neighbors[i].iter().copied()) {
                let v = self.get(i, j);
                for (o, xj) in block.iter_mut().zip(&x[j * dim..(j + 1) * dim]) {
                    *o += v * xj;
                }
            }
        }
        out
    }
}

/// Builds `V = α(I − W)`.
pub fn consensus_matrix(w: &MixingMatrix, alpha: f64) -> Result<ConsensusMatrix> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::InvalidParameter(format!("alpha must be positive, got {alpha}")));
    }
    let n = w.size();
    let mut entries = vec![0.0; n * n];
    let mut neighbors = vec![Vec::new(); n];
    for i in 0..n {
        for j in 0..n {
            let identity = if i == j { 1.0 } else { 0.0 };
            entries[i * n + j] = alpha * (identity - w.get(i, j));
            if i != j && w.get(i, j) > 0.0 {
                neighbors[i].push(j);
            }
        }
    }
    let delta = (0..n)
        .map(|i| (2.0 * alpha * (1.0 - w.get(i, i))).max(f64::EPSILON))
        .collect();
    Ok(ConsensusMatrix {
        alpha,
        size: n,
        entries,
        delta,
        neighbors,
    })
}
