//! Directed graph convolutions.
//!
//! The linear message passing update of node `i` is
//!
//! ```text
//! h'_i = σ( Σ_{j ∈ N^α(i)} c_ij · A_f(i,j) · W h_j  +  l_i A_ii · B h_i  +  b )
//! ```
//!
//! where the edge weight is looked up in whichever direction the edge
//! exists. GCN and Sage layers are configurations of this update; GAT
//! replaces the fixed coefficients with learned attention.

mod gat;
mod lemma1;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::digraph::{Alpha, Digraph, FeaturedDigraph};
use crate::error::{Error, Result};
use crate::numerics::{Mode, SparseMatrix, Tape, Tensor, Var};

pub use gat::{attention_pattern, gat_conv, gat_forward, GatParams};
pub use lemma1::{lemma1_build, lemma1_check, Lemma1Construction};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    /// `c_ij = 1`.
    None,
    /// `c_ij = 1 / |N^α(i)|`; empty neighbourhoods contribute zero.
    Mean,
    /// `c_ij = 1 / sqrt(deg_i · deg_j)` with weighted degrees; zero degrees
    /// count as one.
    Sym,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Identity,
    Silu,
}

impl Activation {
    pub fn apply(self, tape: &mut Tape, x: Var) -> Var {
        match self {
            Activation::Identity => x,
            Activation::Silu => tape.silu(x),
        }
    }
}

/// Self term `l_i A_ii B h_i` with the scalar `l_i A_ii` folded into `coeff`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelfTerm {
    /// `out_dim × in_dim`, row-major.
    pub weight: Vec<f64>,
    pub coeff: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MessagePassingSpec {
    pub alpha: Alpha,
    pub normalization: Normalization,
    /// Add unit self loops before normalizing (the Kipf–Welling form).
    pub add_self_loops: bool,
    pub in_dim: usize,
    pub out_dim: usize,
    /// `out_dim × in_dim`, row-major.
    pub weight: Vec<f64>,
    pub self_term: Option<SelfTerm>,
    pub bias: Option<Vec<f64>>,
    pub activation: Activation,
}

impl MessagePassingSpec {
    /// Plain sum aggregation with weight `W` and identity activation.
    pub fn linear(alpha: Alpha, in_dim: usize, out_dim: usize, weight: Vec<f64>) -> Self {
        Self {
            alpha,
            normalization: Normalization::None,
            add_self_loops: false,
            in_dim,
            out_dim,
            weight,
            self_term: None,
            bias: None,
            activation: Activation::Identity,
        }
    }

    /// Kipf–Welling: self loops plus symmetric normalization.
    pub fn gcn(alpha: Alpha, in_dim: usize, out_dim: usize, weight: Vec<f64>, bias: Vec<f64>) -> Self {
        Self {
            normalization: Normalization::Sym,
            add_self_loops: true,
            bias: Some(bias),
            ..Self::linear(alpha, in_dim, out_dim, weight)
        }
    }

    /// Sage: mean over neighbours plus a separately weighted root term.
    pub fn sage(
        alpha: Alpha,
        in_dim: usize,
        out_dim: usize,
        weight: Vec<f64>,
        root_weight: Vec<f64>,
        bias: Vec<f64>,
    ) -> Self {
        Self {
            normalization: Normalization::Mean,
            self_term: Some(SelfTerm {
                weight: root_weight,
                coeff: 1.0,
            }),
            bias: Some(bias),
            ..Self::linear(alpha, in_dim, out_dim, weight)
        }
    }

    fn validate(&self) -> Result<()> {
        let wlen = self.in_dim * self.out_dim;
        if self.weight.len() != wlen {
            return Err(Error::Shape(format!(
                "weight has {} entries, expected {}×{}",
                self.weight.len(),
                self.out_dim,
                self.in_dim
            )));
        }
        if self.self_term.as_ref().is_some_and(|s| s.weight.len() != wlen) {
            return Err(Error::Shape("self-term weight dimension mismatch".into()));
        }
        if self.bias.as_ref().is_some_and(|b| b.len() != self.out_dim) {
            return Err(Error::Shape("bias dimension mismatch".into()));
        }
        Ok(())
    }
}

/// Weight `A_f(i,j)` of neighbour `j` of `i` under `alpha`, for every
/// neighbour. Under `U` a pair joined in both directions carries the sum
/// of both weights.
fn neighbour_weights(g: &Digraph, i: usize, alpha: Alpha) -> Vec<(usize, f64)> {
    match alpha {
        Alpha::H => g.in_edges(i).to_vec(),
        Alpha::T => g.out_edges(i).to_vec(),
        Alpha::U => {
            let mut merged: Vec<(usize, f64)> = g.out_edges(i).to_vec();
            for &(j, w) in g.in_edges(i) {
                if j == i {
                    continue;
                }
                match merged.binary_search_by_key(&j, |&(n, _)| n) {
                    Ok(k) => merged[k].1 += w,
                    Err(k) => merged.insert(k, (j, w)),
                }
            }
            merged
        }
    }
}

/// Sparse operator `S` with `(S X)_i = Σ_j c_ij A_f(i,j) X_j`.
pub fn aggregation_matrix(
    g: &Digraph,
    alpha: Alpha,
    normalization: Normalization,
    add_self_loops: bool,
) -> Result<SparseMatrix> {
    let n = g.num_nodes();
    let mut rows: Vec<Vec<(usize, f64)>> = (0..n).map(|i| neighbour_weights(g, i, alpha)).collect();
    if add_self_loops {
        for (i, row) in rows.iter_mut().enumerate() {
            match row.binary_search_by_key(&i, |&(j, _)| j) {
                Ok(k) => row[k].1 += 1.0,
                Err(k) => row.insert(k, (i, 1.0)),
            }
        }
    }
    let deg: Vec<f64> = rows.iter().map(|r| r.iter().map(|&(_, w)| w).sum()).collect();
    if normalization == Normalization::Sym {
        if let Some(i) = deg.iter().position(|&d| d < 0.0) {
            return Err(Error::InvalidArgument(format!(
                "symmetric normalization needs nonnegative degrees, node {i} has {}",
                deg[i]
            )));
        }
    }
    let norm_deg = |d: f64| if d > 0.0 { d } else { 1.0 };
    let mut triplets = Vec::new();
    for (i, row) in rows.iter().enumerate() {
        for &(j, w) in row {
            let c = match normalization {
                Normalization::None => 1.0,
                Normalization::Mean => 1.0 / row.len() as f64,
                Normalization::Sym => 1.0 / (norm_deg(deg[i]) * norm_deg(deg[j])).sqrt(),
            };
            triplets.push((i, j, c * w));
        }
    }
    Ok(SparseMatrix::from_triplets(n, n, &triplets))
}

/// Recorded message passing on batched features `x: [batch, nodes, in]`.
/// `w` and `self_w` are `[out, in, 1]` kernels.
pub fn message_passing_forward(
    tape: &mut Tape,
    x: Var,
    mat: Arc<SparseMatrix>,
    w: Var,
    self_term: Option<(Var, f64)>,
    bias: Option<Var>,
    activation: Activation,
) -> Result<Var> {
    let cin = *tape.value(x).shape().last().unwrap();
    let cout = tape.value(w).shape()[0];
    // S (X Wᵀ) = (S X) Wᵀ: aggregate whichever side is narrower.
    let neigh = if cin <= cout {
        let agg = tape.aggregate(x, mat)?;
        tape.conv1d(agg, w, None, 1, false)?
    } else {
        let lin = tape.conv1d(x, w, None, 1, false)?;
        tape.aggregate(lin, mat)?
    };
    let mut out = neigh;
    if let Some((bw, coeff)) = self_term {
        let root = tape.conv1d(x, bw, None, 1, false)?;
        let root = if coeff == 1.0 { root } else { tape.scale(root, coeff) };
        out = tape.add(out, root)?;
    }
    if let Some(b) = bias {
        out = tape.add_bias(out, b)?;
    }
    Ok(activation.apply(tape, out))
}

/// One message passing step on a featured digraph; the topology is kept.
pub fn linear_message_passing(fd: &FeaturedDigraph, spec: &MessagePassingSpec) -> Result<FeaturedDigraph> {
    spec.validate()?;
    if fd.dim() != spec.in_dim {
        return Err(Error::Shape(format!(
            "features of dimension {} for a layer expecting {}",
            fd.dim(),
            spec.in_dim
        )));
    }
    let n = fd.num_nodes();
    if n == 0 {
        return FeaturedDigraph::new(fd.graph.clone(), Vec::new(), spec.out_dim);
    }
    let mat = Arc::new(aggregation_matrix(
        &fd.graph,
        spec.alpha,
        spec.normalization,
        spec.add_self_loops,
    )?);
    let mut tape = Tape::new(Mode::Eval, 0);
    let x = tape.constant(fd.features_tensor()?);
    let kernel = |d: &[f64]| Tensor::new(vec![spec.out_dim, spec.in_dim, 1], d.to_vec());
    let w = tape.constant(kernel(&spec.weight)?);
    let self_term = match &spec.self_term {
        Some(s) => Some((tape.constant(kernel(&s.weight)?), s.coeff)),
        None => None,
    };
    let bias = match &spec.bias {
        Some(b) => Some(tape.constant(Tensor::new(vec![spec.out_dim], b.clone())?)),
        None => None,
    };
    let y = message_passing_forward(&mut tape, x, mat, w, self_term, bias, spec.activation)?;
    FeaturedDigraph::new(fd.graph.clone(), tape.value(y).data().to_vec(), spec.out_dim)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chain_fd() -> FeaturedDigraph {
        let g = Digraph::new(3, vec![(0, 1), (1, 2)]).unwrap();
        FeaturedDigraph::new(g, vec![1.0, 2.0, 3.0], 1).unwrap()
    }

    #[test]
    fn chain_sum_over_in_and_out_edges() {
        let fd = chain_fd();
        let h = linear_message_passing(&fd, &MessagePassingSpec::linear(Alpha::H, 1, 1, vec![1.0])).unwrap();
        assert_eq!(h.features(), &[0.0, 1.0, 2.0]);
        let t = linear_message_passing(&fd, &MessagePassingSpec::linear(Alpha::T, 1, 1, vec![1.0])).unwrap();
        assert_eq!(t.features(), &[2.0, 3.0, 0.0]);
        let u = linear_message_passing(&fd, &MessagePassingSpec::linear(Alpha::U, 1, 1, vec![1.0])).unwrap();
        assert_eq!(u.features(), &[2.0, 4.0, 2.0]);
        assert_eq!(h.graph, fd.graph);
    }

    #[test]
    fn pure_self_pass_is_identity() {
        let g = Digraph::new(3, vec![]).unwrap();
        let fd = FeaturedDigraph::new(g, vec![1.0, -2.0, 0.5, 4.0, 3.0, 7.0], 2).unwrap();
        let eye = vec![1.0, 0.0, 0.0, 1.0];
        let spec = MessagePassingSpec {
            self_term: Some(SelfTerm {
                weight: eye.clone(),
                coeff: 1.0,
            }),
            ..MessagePassingSpec::linear(Alpha::H, 2, 2, eye)
        };
        assert_eq!(linear_message_passing(&fd, &spec).unwrap(), fd);
    }

    #[test]
    fn mean_normalization_on_empty_neighbourhood_is_zero() {
        let fd = chain_fd();
        let spec = MessagePassingSpec {
            normalization: Normalization::Mean,
            ..MessagePassingSpec::linear(Alpha::H, 1, 1, vec![2.0])
        };
        let out = linear_message_passing(&fd, &spec).unwrap();
        assert_eq!(out.features(), &[0.0, 2.0, 4.0]);
    }

    #[test]
    fn gcn_configuration_matches_kipf_welling_on_undirected_graph() {
        // path 0-1-2 as a symmetric digraph
        let g = Digraph::new(3, vec![(0, 1), (1, 0), (1, 2), (2, 1)]).unwrap();
        let fd = FeaturedDigraph::new(g, vec![1.0, 2.0, 4.0], 1).unwrap();
        let out = linear_message_passing(&fd, &MessagePassingSpec::gcn(Alpha::H, 1, 1, vec![1.0], vec![0.0])).unwrap();
        // D̂^{-1/2} (A + I) D̂^{-1/2} x with degrees (2, 3, 2)
        let d = [2.0f64, 3.0, 2.0];
        let a_hat = [[1.0, 1.0, 0.0], [1.0, 1.0, 1.0], [0.0, 1.0, 1.0]];
        let x = [1.0, 2.0, 4.0];
        for i in 0..3 {
            let want: f64 = (0..3).map(|j| a_hat[i][j] * x[j] / (d[i] * d[j]).sqrt()).sum();
            assert!((out.features()[i] - want).abs() < 1e-14);
        }
    }

    #[test]
    fn sage_configuration_is_mean_plus_root() {
        let fd = chain_fd();
        let spec = MessagePassingSpec::sage(Alpha::H, 1, 1, vec![2.0], vec![-1.0], vec![0.5]);
        let out = linear_message_passing(&fd, &spec).unwrap();
        assert_eq!(out.features(), &[-0.5, 0.5, 1.5]);
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let fd = chain_fd();
        assert!(linear_message_passing(&fd, &MessagePassingSpec::linear(Alpha::H, 2, 1, vec![1.0, 1.0])).is_err());
        assert!(linear_message_passing(&fd, &MessagePassingSpec::linear(Alpha::H, 1, 1, vec![])).is_err());
    }

    #[test]
    fn sym_normalization_rejects_negative_degree() {
        let g = Digraph::weighted(2, vec![(0, 1)], vec![-3.0]).unwrap();
        assert!(aggregation_matrix(&g, Alpha::T, Normalization::Sym, true).is_err());
    }
}
