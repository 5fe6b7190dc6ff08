//! Communication graphs: construction, Laplacian/incidence spectra and
//! PG-EXTRA mixing matrices.
//!
//! Nodes are 0-based internally. Edges are oriented `(i, j)` with `i < j`
//! and kept sorted, which makes the incidence matrix unique.

use std::collections::{BTreeSet, VecDeque};
use std::fmt::Write as _;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::linalg;

/// Relative threshold separating the Laplacian null space from round-off.
pub const ZERO_EIG_REL_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TopologyKind {
    Star,
    Circle,
    Clique,
    SmallWorld,
}

impl TopologyKind {
    pub fn name(self) -> &'static str {
        match self {
            TopologyKind::Star => "star",
            TopologyKind::Circle => "circle",
            TopologyKind::Clique => "clique",
            TopologyKind::SmallWorld => "small_world",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologySpec {
    pub kind: TopologyKind,
    pub nodes: usize,
    #[serde(default)]
    pub extra_edges: usize,
    #[serde(default)]
    pub seed: u64,
}

impl TopologySpec {
    pub fn new(kind: TopologyKind, nodes: usize) -> Self {
        TopologySpec {
            kind,
            nodes,
            extra_edges: 0,
            seed: 0,
        }
    }

    pub fn build(&self) -> Result<Graph> {
        build_topology(self.kind, self.nodes, self.extra_edges, self.seed)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Graph {
    node_count: usize,
    edges: Vec<(usize, usize)>,
    neighbors: Vec<Vec<usize>>,
}

impl Graph {
    /// Builds a connected simple graph. Edge endpoints may be given in either
    /// order; they are stored oriented and sorted.
    pub fn new(node_count: usize, edges: &[(usize, usize)]) -> Result<Graph> {
        if node_count == 0 {
            return Err(invalid("graph needs at least one node"));
        }
        let mut set = BTreeSet::new();
        for &(a, b) in edges {
            if a >= node_count || b >= node_count {
                return Err(invalid(format!("edge ({a},{b}) out of range")));
            }
            if a == b {
                return Err(invalid(format!("self-loop at node {a}")));
            }
            let e = (a.min(b), a.max(b));
            if !set.insert(e) {
                return Err(invalid(format!("duplicate edge ({},{})", e.0, e.1)));
            }
        }
        let edges: Vec<(usize, usize)> = set.into_iter().collect();
        let mut neighbors = vec![Vec::new(); node_count];
        for &(i, j) in &edges {
            neighbors[i].push(j);
            neighbors[j].push(i);
        }
        for nb in &mut neighbors {
            nb.sort_unstable();
        }
        let g = Graph {
            node_count,
            edges,
            neighbors,
        };
        if !g.is_connected() {
            return Err(Error::Disconnected);
        }
        Ok(g)
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.neighbors[i].len()
    }

    pub fn degrees(&self) -> Vec<usize> {
        self.neighbors.iter().map(Vec::len).collect()
    }

    pub fn max_degree(&self) -> usize {
        self.neighbors.iter().map(Vec::len).max().unwrap_or(0)
    }

    pub fn min_degree(&self) -> usize {
        self.neighbors.iter().map(Vec::len).min().unwrap_or(0)
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        i < self.node_count && self.neighbors[i].binary_search(&j).is_ok()
    }

    /// Position of the oriented edge `(min, max)` in [`Graph::edges`].
    pub fn edge_index(&self, i: usize, j: usize) -> Option<usize> {
        let e = (i.min(j), i.max(j));
        self.edges.binary_search(&e).ok()
    }

    fn is_connected(&self) -> bool {
        let mut seen = vec![false; self.node_count];
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
        count == self.node_count
    }

    /// Copy of the graph with one more edge.
    pub fn with_edge(&self, i: usize, j: usize) -> Result<Graph> {
        let mut edges = self.edges.clone();
        edges.push((i, j));
        Graph::new(self.node_count, &edges)
    }

    pub fn laplacian(&self) -> Array2<f64> {
        let n = self.node_count;
        let mut l = Array2::zeros((n, n));
        for &(i, j) in &self.edges {
            l[[i, j]] -= 1.0;
            l[[j, i]] -= 1.0;
            l[[i, i]] += 1.0;
            l[[j, j]] += 1.0;
        }
        l
    }

    /// Oriented incidence matrix: row `e` has +1 at the tail `i` and −1 at the head `j`.
    pub fn incidence(&self) -> Array2<f64> {
        let mut m = Array2::zeros((self.edges.len(), self.node_count));
        for (e, &(i, j)) in self.edges.iter().enumerate() {
            m[[e, i]] = 1.0;
            m[[e, j]] = -1.0;
        }
        m
    }

    /// One "i j" line per edge, 1-based.
    pub fn to_edge_list(&self) -> String {
        let mut out = String::new();
        for &(i, j) in &self.edges {
            let _ = writeln!(out, "{} {}", i + 1, j + 1);
        }
        out
    }

    /// Parses the edge-list format; the node count is the largest id seen
    /// unless given explicitly.
    pub fn from_edge_list(text: &str, node_count: Option<usize>) -> Result<Graph> {
        let mut edges = Vec::new();
        let mut max_id = 0;
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let ids: Vec<usize> = line
                .split_whitespace()
                .map(|t| t.parse::<usize>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| invalid(format!("line {}: {e}", lineno + 1)))?;
            if ids.len() != 2 || ids[0] == 0 || ids[1] == 0 {
                return Err(invalid(format!(
                    "line {}: expected two 1-based node ids",
                    lineno + 1
                )));
            }
            max_id = max_id.max(ids[0]).max(ids[1]);
            edges.push((ids[0] - 1, ids[1] - 1));
        }
        Graph::new(node_count.unwrap_or(max_id), &edges)
    }
}

pub fn build_topology(kind: TopologyKind, n: usize, extra_edges: usize, seed: u64) -> Result<Graph> {
    if n < 2 {
        return Err(invalid(format!("topology needs N >= 2, got {n}")));
    }
    let cycle = |n: usize| -> Vec<(usize, usize)> {
        if n == 2 {
            vec![(0, 1)]
        } else {
            (0..n).map(|i| (i, (i + 1) % n)).collect()
        }
    };
    let edges: Vec<(usize, usize)> = match kind {
        TopologyKind::Star => (1..n).map(|j| (0, j)).collect(),
        TopologyKind::Circle => cycle(n),
        TopologyKind::Clique => (0..n)
            .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
            .collect(),
        TopologyKind::SmallWorld => {
            let base = cycle(n);
            let cycle_g = Graph::new(n, &base)?;
            let free: Vec<(usize, usize)> = (0..n)
                .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
                .filter(|&(i, j)| !cycle_g.has_edge(i, j))
                .collect();
            if extra_edges > free.len() {
                return Err(invalid(format!(
                    "extra_edges = {extra_edges} exceeds the {} available non-cycle pairs",
                    free.len()
                )));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let picked = rand::seq::index::sample(&mut rng, free.len(), extra_edges);
            let mut edges = base;
            edges.extend(picked.iter().map(|k| free[k]));
            edges
        }
    };
    if kind != TopologyKind::SmallWorld && extra_edges != 0 {
        return Err(invalid(format!(
            "extra_edges only applies to small_world, got {extra_edges} for {}",
            kind.name()
        )));
    }
    Graph::new(n, &edges)
}

#[derive(Clone, Debug)]
pub struct SpectralSummary {
    pub laplacian: Array2<f64>,
    pub incidence: Array2<f64>,
    /// Laplacian eigenvalues, ascending.
    pub eigenvalues: Vec<f64>,
    pub psi_min_pos: f64,
    pub psi_max: f64,
    pub frob_norm_sq: f64,
}

pub fn spectral_summary(g: &Graph) -> Result<SpectralSummary> {
    if g.node_count() < 2 {
        return Err(invalid("spectral summary needs at least two nodes"));
    }
    let laplacian = g.laplacian();
    let incidence = g.incidence();
    let eigenvalues = linalg::symmetric_eigenvalues(laplacian.view())?;
    let psi_max = *eigenvalues.last().expect("nonempty");
    let zero_tol = ZERO_EIG_REL_TOL * psi_max;
    let zeros = eigenvalues.iter().filter(|v| v.abs() < zero_tol).count();
    if zeros != 1 || psi_max <= 0.0 {
        return Err(Error::Numeric(format!(
            "Laplacian of a connected graph should have one zero eigenvalue, found {zeros}"
        )));
    }
    let psi_min_pos = eigenvalues[1];
    let frob_norm_sq = laplacian.iter().map(|v| v * v).sum();
    Ok(SpectralSummary {
        laplacian,
        incidence,
        eigenvalues,
        psi_min_pos,
        psi_max,
        frob_norm_sq,
    })
}

#[derive(Clone, Debug)]
pub struct MixingPair {
    pub w: Array2<f64>,
    pub w_tilde: Array2<f64>,
    pub lambda_min_w_tilde: f64,
}

/// `W = I − Ω/(d_max+1)` and `W̃ = (I+W)/2`.
pub fn mixing_pair(g: &Graph) -> Result<MixingPair> {
    let n = g.node_count();
    let scale = 1.0 / (g.max_degree() as f64 + 1.0);
    let eye = Array2::<f64>::eye(n);
    let w = &eye - &(g.laplacian() * scale);
    let w_tilde = (&eye + &w) * 0.5;
    let lambda_min_w_tilde = linalg::symmetric_eigenvalues(w_tilde.view())?[0];
    if lambda_min_w_tilde <= 0.0 {
        return Err(Error::Numeric(format!(
            "mixing matrix W̃ is not positive definite (λ_min = {lambda_min_w_tilde:e})"
        )));
    }
    Ok(MixingPair {
        w,
        w_tilde,
        lambda_min_w_tilde,
    })
}
