use serde::{Deserialize, Serialize};

use super::{build::grid_node, check_permutation, Digraph, DigraphVariant};
use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// `r × m` samples (`r` time steps, `m` channels), row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSeries {
    values: Vec<f64>,
    len: usize,
    channels: usize,
    pub sample_rate_hz: f64,
    pub label: Option<i64>,
}

impl TimeSeries {
    pub fn new(values: Vec<f64>, len: usize, channels: usize, sample_rate_hz: f64) -> Result<Self> {
        if len < 1 || channels < 1 {
            return Err(Error::InvalidArgument("time series needs r ≥ 1 and m ≥ 1".into()));
        }
        if values.len() != len * channels {
            return Err(Error::Shape(format!(
                "{} values for a {len}×{channels} series",
                values.len()
            )));
        }
        if !(sample_rate_hz > 0.0) {
            return Err(Error::InvalidArgument("sample rate must be positive".into()));
        }
        Ok(Self {
            values,
            len,
            channels,
            sample_rate_hz,
            label: None,
        })
    }

    pub fn univariate(values: Vec<f64>, sample_rate_hz: f64) -> Result<Self> {
        let n = values.len();
        Self::new(values, n, 1, sample_rate_hz)
    }

    pub fn with_label(mut self, label: i64) -> Self {
        self.label = Some(label);
        self
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// `x(i)_j`.
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.channels + j]
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(vec![self.len, self.channels], self.values.clone()).expect("valid dims")
    }
}

/// Digraph with one feature vector of dimension `dim` per node.
#[derive(Debug, Clone, PartialEq)]
pub struct FeaturedDigraph {
    pub graph: Digraph,
    features: Vec<f64>,
    dim: usize,
}

impl FeaturedDigraph {
    pub fn new(graph: Digraph, features: Vec<f64>, dim: usize) -> Result<Self> {
        if features.len() != graph.num_nodes() * dim {
            return Err(Error::Shape(format!(
                "{} feature values for {} nodes of dimension {dim}",
                features.len(),
                graph.num_nodes()
            )));
        }
        Ok(Self {
            graph,
            features,
            dim,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_nodes(&self) -> usize {
        self.graph.num_nodes()
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn feature(&self, node: usize) -> &[f64] {
        &self.features[node * self.dim..(node + 1) * self.dim]
    }

    /// Features as a `[nodes, dim]` tensor.
    pub fn features_tensor(&self) -> Result<Tensor> {
        Tensor::new(vec![self.num_nodes(), self.dim], self.features.clone())
    }

    /// Relabels node `i` as `perm[i]`, moving its feature row along.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        check_permutation(perm, self.num_nodes())?;
        let graph = self.graph.permuted(perm)?;
        let mut features = vec![0.0; self.features.len()];
        for (i, &p) in perm.iter().enumerate() {
            features[p * self.dim..(p + 1) * self.dim].copy_from_slice(self.feature(i));
        }
        Self::new(graph, features, self.dim)
    }

    /// Inverse of [`attach_features`].
    pub fn to_time_series(&self, variant: DigraphVariant, channels: usize, sample_rate_hz: f64) -> Result<TimeSeries> {
        match variant {
            DigraphVariant::Series => {
                TimeSeries::new(self.features.clone(), self.num_nodes(), self.dim, sample_rate_hz)
            }
            DigraphVariant::Grid | DigraphVariant::DenseGrid => {
                if self.dim != 1 || channels == 0 || self.num_nodes() % channels != 0 {
                    return Err(Error::Shape("grid features must be scalars over r·m nodes".into()));
                }
                TimeSeries::new(
                    self.features.clone(),
                    self.num_nodes() / channels,
                    channels,
                    sample_rate_hz,
                )
            }
        }
    }
}

/// Puts `x(i) ∈ R^m` on node `v_i` (series) or `x(i)_j` on `v_{ij}` (grid).
pub fn attach_features(ts: &TimeSeries, g: &Digraph, variant: DigraphVariant) -> Result<FeaturedDigraph> {
    let (r, m) = (ts.len(), ts.channels());
    match variant {
        DigraphVariant::Series => {
            if g.num_nodes() != r {
                return Err(Error::Shape(format!("{} nodes for {r} time steps", g.num_nodes())));
            }
            FeaturedDigraph::new(g.clone(), ts.values().to_vec(), m)
        }
        DigraphVariant::Grid | DigraphVariant::DenseGrid => {
            if g.num_nodes() != r * m {
                return Err(Error::Shape(format!("{} nodes for a {r}×{m} grid", g.num_nodes())));
            }
            let mut f = vec![0.0; r * m];
            for i in 0..r {
                for j in 0..m {
                    f[grid_node(i, j, m)] = ts.at(i, j);
                }
            }
            FeaturedDigraph::new(g.clone(), f, 1)
        }
    }
}

/// Induced subgraph on `subset` (in the given order) with features pulled
/// back along the inclusion.
pub fn pullback_subgraph_features(fd: &FeaturedDigraph, subset: &[usize]) -> Result<FeaturedDigraph> {
    let n = fd.num_nodes();
    let mut index = vec![usize::MAX; n];
    for (new, &old) in subset.iter().enumerate() {
        if old >= n {
            return Err(Error::NodeOutOfRange { node: old, num_nodes: n });
        }
        if index[old] != usize::MAX {
            return Err(Error::InvalidArgument(format!("node {old} repeated in subset")));
        }
        index[old] = new;
    }
    let weighted = fd.graph.is_weighted();
    let mut edges = Vec::new();
    let mut weights = Vec::new();
    for &old in subset {
        for &(h, w) in fd.graph.out_edges(old) {
            if index[h] != usize::MAX {
                edges.push((index[old], index[h]));
                weights.push(w);
            }
        }
    }
    let graph = if weighted {
        Digraph::weighted(subset.len(), edges, weights)?
    } else {
        Digraph::new(subset.len(), edges)?
    };
    let features = subset.iter().flat_map(|&i| fd.feature(i).iter().copied()).collect();
    FeaturedDigraph::new(graph, features, fd.dim())
}
