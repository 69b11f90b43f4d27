//! Multi-head graph attention layer.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::digraph::{Alpha, Digraph, FeaturedDigraph};
use crate::error::{Error, Result};
use crate::numerics::{HeadMerge, Mode, SparseMatrix, Tape, Tensor, Var};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GatParams {
    pub heads: usize,
    pub in_dim: usize,
    pub head_dim: usize,
    /// Stacked per-head projections, `(heads·head_dim) × in_dim` row-major.
    pub weight: Vec<f64>,
    /// Per-head attention vector halves for the neighbour and the centre.
    pub att_src: Vec<f64>,
    pub att_dst: Vec<f64>,
    pub negative_slope: f64,
    pub merge: HeadMerge,
    pub bias: Option<Vec<f64>>,
}

impl GatParams {
    pub fn out_dim(&self) -> usize {
        match self.merge {
            HeadMerge::Concat => self.heads * self.head_dim,
            HeadMerge::Average => self.head_dim,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.heads == 0 || self.head_dim == 0 {
            return Err(Error::InvalidArgument("attention needs at least one head of positive width".into()));
        }
        let width = self.heads * self.head_dim;
        if self.weight.len() != width * self.in_dim {
            return Err(Error::Shape("attention projection dimension mismatch".into()));
        }
        if self.att_src.len() != width || self.att_dst.len() != width {
            return Err(Error::Shape("attention vector dimension mismatch".into()));
        }
        if self.bias.as_ref().is_some_and(|b| b.len() != self.out_dim()) {
            return Err(Error::Shape("attention bias dimension mismatch".into()));
        }
        Ok(())
    }
}

/// Sparsity pattern `N^α(i) ∪ {i}` for every row `i`.
pub fn attention_pattern(g: &Digraph, alpha: Alpha) -> SparseMatrix {
    let n = g.num_nodes();
    let mut triplets = Vec::new();
    for i in 0..n {
        let mut row: Vec<usize> = match alpha {
            Alpha::H => g.in_edges(i).iter().map(|&(j, _)| j).collect(),
            Alpha::T => g.out_edges(i).iter().map(|&(j, _)| j).collect(),
            Alpha::U => g
                .in_edges(i)
                .iter()
                .chain(g.out_edges(i))
                .map(|&(j, _)| j)
                .collect(),
        };
        row.push(i);
        row.sort_unstable();
        row.dedup();
        triplets.extend(row.into_iter().map(|j| (i, j, 1.0)));
    }
    SparseMatrix::from_triplets(n, n, &triplets)
}

/// Recorded attention layer on `x: [batch, nodes, in]`; `w` is a
/// `[heads·head_dim, in, 1]` kernel.
#[allow(clippy::too_many_arguments)]
pub fn gat_forward(
    tape: &mut Tape,
    x: Var,
    pattern: Arc<SparseMatrix>,
    w: Var,
    att_src: Var,
    att_dst: Var,
    heads: usize,
    merge: HeadMerge,
    slope: f64,
    bias: Option<Var>,
) -> Result<Var> {
    let z = tape.conv1d(x, w, None, 1, false)?;
    let out = tape.attention(z, att_src, att_dst, pattern, heads, merge, slope)?;
    match bias {
        Some(b) => tape.add_bias(out, b),
        None => Ok(out),
    }
}

pub fn gat_conv(fd: &FeaturedDigraph, p: &GatParams, alpha: Alpha) -> Result<FeaturedDigraph> {
    p.validate()?;
    if fd.dim() != p.in_dim {
        return Err(Error::Shape(format!(
            "features of dimension {} for a layer expecting {}",
            fd.dim(),
            p.in_dim
        )));
    }
    if fd.num_nodes() == 0 {
        return FeaturedDigraph::new(fd.graph.clone(), Vec::new(), p.out_dim());
    }
    let width = p.heads * p.head_dim;
    let mut tape = Tape::new(Mode::Eval, 0);
    let x = tape.constant(fd.features_tensor()?);
    let w = tape.constant(Tensor::new(vec![width, p.in_dim, 1], p.weight.clone())?);
    let a_src = tape.constant(Tensor::new(vec![width], p.att_src.clone())?);
    let a_dst = tape.constant(Tensor::new(vec![width], p.att_dst.clone())?);
    let bias = match &p.bias {
        Some(b) => Some(tape.constant(Tensor::new(vec![b.len()], b.clone())?)),
        None => None,
    };
    let pattern = Arc::new(attention_pattern(&fd.graph, alpha));
    let y = gat_forward(
        &mut tape,
        x,
        pattern,
        w,
        a_src,
        a_dst,
        p.heads,
        p.merge,
        p.negative_slope,
        bias,
    )?;
    FeaturedDigraph::new(fd.graph.clone(), tape.value(y).data().to_vec(), p.out_dim())
}
