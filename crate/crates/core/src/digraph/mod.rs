//! Digraphs with node features built from time series.
//!
//! A series `x ∈ R^{r×m}` becomes either a *series* digraph (one node per
//! time step carrying `x(i) ∈ R^m`) or a *grid* digraph (one node per
//! time/channel pair carrying the scalar `x(i)_j`). Edges always point
//! forward in time, so a node only ever receives from its past.

mod build;
mod features;

use std::collections::{BTreeSet, HashSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use build::{build_grid_digraph, build_series_digraph, grid_node};
pub use features::{attach_features, pullback_subgraph_features, FeaturedDigraph, TimeSeries};

/// Which neighbourhood a node aggregates over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Alpha {
    /// In-neighbours: the nodes sending to `v_i`.
    H,
    /// Out-neighbours: the nodes `v_i` sends to.
    T,
    /// Both.
    U,
}

impl Alpha {
    pub const ALL: [Alpha; 3] = [Alpha::H, Alpha::T, Alpha::U];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DigraphVariant {
    Series,
    /// Grid with adjacent and stride edges only.
    Grid,
    /// Grid with every forward, non-self-loop pair.
    DenseGrid,
}

/// Parameters of a time-digraph: stride `d` between connected nodes and
/// connection bound `k`, giving a lookback window of `k·d`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimeDigraphSpec {
    pub d: usize,
    pub k: usize,
    pub include_adjacent: bool,
    pub variant: DigraphVariant,
}

impl TimeDigraphSpec {
    pub fn series(d: usize, k: usize) -> Self {
        Self {
            d,
            k,
            include_adjacent: true,
            variant: DigraphVariant::Series,
        }
    }

    /// Smallest `k` whose stride edges stay strictly inside `lookback`
    /// samples, i.e. `k = ceil(lookback / d)`.
    pub fn from_lookback(lookback: usize, d: usize) -> Self {
        Self::series(d, lookback.div_ceil(d.max(1)))
    }

    pub fn lookback(&self) -> usize {
        self.k * self.d
    }

    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.k == 0 {
            return Err(Error::InvalidArgument(format!(
                "time-digraph needs d ≥ 1 and k ≥ 1, got d={} k={}",
                self.d, self.k
            )));
        }
        Ok(())
    }

    /// Whether a forward time offset `delta = l − i > 0` carries an edge.
    pub fn connects(&self, delta: usize) -> bool {
        (self.include_adjacent && delta == 1) || (delta % self.d == 0 && delta < self.k * self.d)
    }
}

/// Simple digraph stored as an edge list with optional nonzero weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Digraph {
    num_nodes: usize,
    edges: Vec<(usize, usize)>,
    weights: Option<Vec<f64>>,
    out_adj: Vec<Vec<(usize, f64)>>,
    in_adj: Vec<Vec<(usize, f64)>>,
}

impl Digraph {
    pub fn new(num_nodes: usize, edges: Vec<(usize, usize)>) -> Result<Self> {
        Self::build(num_nodes, edges, None)
    }

    /// Weighted digraph; an edge exists iff its weight is nonzero.
    pub fn weighted(num_nodes: usize, edges: Vec<(usize, usize)>, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != edges.len() {
            return Err(Error::Shape(format!(
                "{} edges but {} weights",
                edges.len(),
                weights.len()
            )));
        }
        if let Some(w) = weights.iter().find(|w| **w == 0.0 || !w.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "edge weights must be finite and nonzero, got {w}"
            )));
        }
        Self::build(num_nodes, edges, Some(weights))
    }

    /// Weighted digraph from a dense matrix: edge `(i, j)` iff `A_ij ≠ 0`.
    pub fn from_adjacency(a: &[Vec<f64>]) -> Result<Self> {
        let n = a.len();
        let mut edges = Vec::new();
        let mut weights = Vec::new();
        for (i, row) in a.iter().enumerate() {
            if row.len() != n {
                return Err(Error::Shape("adjacency matrix must be square".into()));
            }
            for (j, &v) in row.iter().enumerate() {
                if v != 0.0 {
                    edges.push((i, j));
                    weights.push(v);
                }
            }
        }
        Self::weighted(n, edges, weights)
    }

    fn build(num_nodes: usize, edges: Vec<(usize, usize)>, weights: Option<Vec<f64>>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(edges.len());
        let mut out_adj = vec![Vec::new(); num_nodes];
        let mut in_adj = vec![Vec::new(); num_nodes];
        for (e, &(t, h)) in edges.iter().enumerate() {
            for node in [t, h] {
                if node >= num_nodes {
                    return Err(Error::NodeOutOfRange { node, num_nodes });
                }
            }
            if !seen.insert((t, h)) {
                return Err(Error::InvalidArgument(format!("duplicate edge {t}→{h}")));
            }
            let w = weights.as_ref().map_or(1.0, |w| w[e]);
            out_adj[t].push((h, w));
            in_adj[h].push((t, w));
        }
        for list in out_adj.iter_mut().chain(in_adj.iter_mut()) {
            list.sort_by_key(|&(n, _)| n);
        }
        Ok(Self {
            num_nodes,
            edges,
            weights,
            out_adj,
            in_adj,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn weights(&self) -> Option<&[f64]> {
        self.weights.as_deref()
    }

    pub fn is_weighted(&self) -> bool {
        self.weights.is_some()
    }

    /// `(head, weight)` pairs of edges leaving `i`, sorted by head.
    pub fn out_edges(&self, i: usize) -> &[(usize, f64)] {
        &self.out_adj[i]
    }

    /// `(tail, weight)` pairs of edges entering `i`, sorted by tail.
    pub fn in_edges(&self, i: usize) -> &[(usize, f64)] {
        &self.in_adj[i]
    }

    /// `A_ij`, zero when there is no edge `i → j`.
    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.out_adj[i]
            .binary_search_by_key(&j, |&(n, _)| n)
            .map_or(0.0, |k| self.out_adj[i][k].1)
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.weight(i, j) != 0.0
    }

    pub fn adjacency_matrix(&self) -> Vec<Vec<f64>> {
        let mut a = vec![vec![0.0; self.num_nodes]; self.num_nodes];
        for i in 0..self.num_nodes {
            for &(j, w) in &self.out_adj[i] {
                a[i][j] = w;
            }
        }
        a
    }

    /// A digraph whose adjacency matrix is symmetric is undirected.
    pub fn is_undirected(&self) -> bool {
        self.edges
            .iter()
            .all(|&(i, j)| self.weight(j, i) == self.weight(i, j))
    }

    pub fn neighborhood(&self, i: usize, alpha: Alpha) -> Result<BTreeSet<usize>> {
        if i >= self.num_nodes {
            return Err(Error::NodeOutOfRange {
                node: i,
                num_nodes: self.num_nodes,
            });
        }
        let ins = self.in_adj[i].iter().map(|&(j, _)| j);
        let outs = self.out_adj[i].iter().map(|&(j, _)| j);
        Ok(match alpha {
            Alpha::H => ins.collect(),
            Alpha::T => outs.collect(),
            Alpha::U => ins.chain(outs).collect(),
        })
    }

    /// Same nodes with every edge reversed, keeping its weight.
    pub fn reversed(&self) -> Self {
        let edges = self.edges.iter().map(|&(t, h)| (h, t)).collect();
        Self::build(self.num_nodes, edges, self.weights.clone()).expect("reversal keeps validity")
    }

    /// Relabels node `i` as `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        check_permutation(perm, self.num_nodes)?;
        let edges = self.edges.iter().map(|&(t, h)| (perm[t], perm[h])).collect();
        Self::build(self.num_nodes, edges, self.weights.clone())
    }

    /// One `tail head weight` line per edge, 1-based node indices.
    pub fn to_edge_list(&self) -> String {
        let mut s = String::new();
        for (e, &(t, h)) in self.edges.iter().enumerate() {
            let w = self.weights.as_ref().map_or(1.0, |w| w[e]);
            writeln!(s, "{} {} {}", t + 1, h + 1, w).unwrap();
        }
        s
    }

    /// Parses [`Digraph::to_edge_list`] output back into a weighted digraph.
    pub fn from_edge_list(num_nodes: usize, text: &str) -> Result<Self> {
        let mut edges = Vec::new();
        let mut weights = Vec::new();
        for (ln, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let parts: Vec<&str> = line.split_whitespace().collect();
            let bad = || Error::Format(format!("edge list line {}: {line:?}", ln + 1));
            let [t, h, w] = parts[..] else { return Err(bad()) };
            let t: usize = t.parse().map_err(|_| bad())?;
            let h: usize = h.parse().map_err(|_| bad())?;
            let w: f64 = w.parse().map_err(|_| bad())?;
            if t == 0 || h == 0 {
                return Err(bad());
            }
            edges.push((t - 1, h - 1));
            weights.push(w);
        }
        Self::weighted(num_nodes, edges, weights)
    }
}

pub(crate) fn check_permutation(perm: &[usize], n: usize) -> Result<()> {
    let mut seen = vec![false; n];
    if perm.len() != n {
        return Err(Error::Shape(format!("permutation of length {} for {n} nodes", perm.len())));
    }
    for &p in perm {
        if p >= n || std::mem::replace(&mut seen[p], true) {
            return Err(Error::InvalidArgument("not a permutation".into()));
        }
    }
    Ok(())
}
