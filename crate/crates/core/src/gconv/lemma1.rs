//! A 1-D convolution written as a weighted digraph convolution followed by
//! restriction to a node subset.

use super::{linear_message_passing, MessagePassingSpec};
use crate::digraph::{pullback_subgraph_features, Alpha, Digraph, FeaturedDigraph};
use crate::error::{Error, Result};
use crate::numerics::{conv1d, Conv1dParams, Tensor};

#[derive(Debug, Clone)]
pub struct Lemma1Construction {
    /// `A_ij = K_{j−i+1}` for `0 ≤ j − i < r` (0-based: `A_ij = K[j − i]`).
    pub graph: Digraph,
    /// Nodes on which the convolution output is fully supported.
    pub subset: Vec<usize>,
    pub spec: MessagePassingSpec,
}

/// Weighted digraph, output subset and layer reproducing the valid
/// cross-correlation of a length-`d_len` signal with kernel `k`.
/// Zero taps produce no arc, so dilated kernels give sparse graphs.
pub fn lemma1_build(k: &[f64], d_len: usize) -> Result<Lemma1Construction> {
    let r = k.len();
    if r == 0 {
        return Err(Error::InvalidArgument("kernel must be nonempty".into()));
    }
    if r > d_len {
        return Err(Error::InvalidArgument(format!(
            "kernel of length {r} longer than signal of length {d_len}"
        )));
    }
    if let Some(v) = k.iter().find(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument(format!("non-finite kernel tap {v}")));
    }
    let mut edges = Vec::new();
    let mut weights = Vec::new();
    for i in 0..d_len {
        for (off, &w) in k.iter().enumerate() {
            if i + off < d_len && w != 0.0 {
                edges.push((i, i + off));
                weights.push(w);
            }
        }
    }
    Ok(Lemma1Construction {
        graph: Digraph::weighted(d_len, edges, weights)?,
        subset: (0..=d_len - r).collect(),
        spec: MessagePassingSpec::linear(Alpha::T, 1, 1, vec![1.0]),
    })
}

/// Largest absolute difference between the direct convolution of `x` with
/// `k` and the graph path (message passing, then restriction).
pub fn lemma1_check(k: &[f64], x: &[f64]) -> Result<f64> {
    if x.len() < k.len() {
        return Err(Error::InvalidArgument(format!(
            "signal of length {} shorter than kernel of length {}",
            x.len(),
            k.len()
        )));
    }
    let c = lemma1_build(k, x.len())?;
    let fd = FeaturedDigraph::new(c.graph.clone(), x.to_vec(), 1)?;
    let via_graph = pullback_subgraph_features(&linear_message_passing(&fd, &c.spec)?, &c.subset)?;

    let direct = conv1d(
        &Tensor::new(vec![x.len(), 1], x.to_vec())?,
        &Conv1dParams::from_taps(k, 1, false)?,
    )?;
    if direct.len() != via_graph.features().len() {
        return Err(Error::Shape("convolution and graph outputs differ in length".into()));
    }
    Ok(direct
        .data()
        .iter()
        .zip(via_graph.features())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max))
}
