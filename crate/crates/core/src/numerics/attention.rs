//! Fused multi-head graph attention kernel (forward and backward).
//!
//! For each head `h` with projected features `z_i ∈ R^D`:
//! `e_ij = leaky_relu(a_dst·z_i + a_src·z_j)` over the sparsity pattern of
//! row `i`, `α_ij = softmax_j(e_ij)` and `out_i = Σ_j α_ij z_j`.

use serde::{Deserialize, Serialize};

use super::sparse::SparseMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadMerge {
    Concat,
    Average,
}

#[derive(Debug, Clone, Copy)]
pub struct AttentionGeom {
    pub batch: usize,
    pub nodes: usize,
    pub heads: usize,
    pub head_dim: usize,
    pub merge: HeadMerge,
    pub slope: f64,
}

impl AttentionGeom {
    pub fn out_dim(&self) -> usize {
        match self.merge {
            HeadMerge::Concat => self.heads * self.head_dim,
            HeadMerge::Average => self.head_dim,
        }
    }

    fn width(&self) -> usize {
        self.heads * self.head_dim
    }
}

/// Saved per-edge quantities, laid out `[batch, head, nnz]`.
#[derive(Debug, Clone)]
pub struct AttentionCache {
    pub alpha: Vec<f64>,
    pub pre: Vec<f64>,
}

fn scores(z: &[f64], a: &[f64], g: &AttentionGeom, b: usize, h: usize) -> Vec<f64> {
    let w = g.width();
    (0..g.nodes)
        .map(|i| {
            let zi = &z[(b * g.nodes + i) * w + h * g.head_dim..][..g.head_dim];
            zi.iter()
                .zip(&a[h * g.head_dim..(h + 1) * g.head_dim])
                .map(|(x, y)| x * y)
                .sum()
        })
        .collect()
}

pub fn attention_forward(
    z: &[f64],
    a_src: &[f64],
    a_dst: &[f64],
    pattern: &SparseMatrix,
    g: &AttentionGeom,
) -> (Vec<f64>, AttentionCache) {
    let w = g.width();
    let nnz = pattern.nnz();
    let od = g.out_dim();
    let mut out = vec![0.0; g.batch * g.nodes * od];
    let mut alpha = vec![0.0; g.batch * g.heads * nnz];
    let mut pre = vec![0.0; g.batch * g.heads * nnz];
    let head_scale = match g.merge {
        HeadMerge::Concat => 1.0,
        HeadMerge::Average => 1.0 / g.heads as f64,
    };
    for b in 0..g.batch {
        for h in 0..g.heads {
            let ss = scores(z, a_src, g, b, h);
            let sd = scores(z, a_dst, g, b, h);
            let base = (b * g.heads + h) * nnz;
            let mut e = 0;
            for i in 0..g.nodes {
                let start = e;
                let mut max = f64::NEG_INFINITY;
                for (j, _) in pattern.row(i) {
                    let p = sd[i] + ss[j];
                    pre[base + e] = p;
                    let l = if p > 0.0 { p } else { g.slope * p };
                    alpha[base + e] = l;
                    max = max.max(l);
                    e += 1;
                }
                let mut total = 0.0;
                for a in &mut alpha[base + start..base + e] {
                    *a = (*a - max).exp();
                    total += *a;
                }
                for a in &mut alpha[base + start..base + e] {
                    *a /= total;
                }
                let off = match g.merge {
                    HeadMerge::Concat => h * g.head_dim,
                    HeadMerge::Average => 0,
                };
                let oi = &mut out[(b * g.nodes + i) * od + off..][..g.head_dim];
                for (k, (j, _)) in pattern.row(i).enumerate() {
                    let coef = alpha[base + start + k] * head_scale;
                    let zj = &z[(b * g.nodes + j) * w + h * g.head_dim..][..g.head_dim];
                    for (o, v) in oi.iter_mut().zip(zj) {
                        *o += coef * v;
                    }
                }
            }
        }
    }
    (out, AttentionCache { alpha, pre })
}

/// Returns `(dz, da_src, da_dst)`.
pub fn attention_backward(
    z: &[f64],
    a_src: &[f64],
    a_dst: &[f64],
    pattern: &SparseMatrix,
    g: &AttentionGeom,
    cache: &AttentionCache,
    dout: &[f64],
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let w = g.width();
    let d = g.head_dim;
    let nnz = pattern.nnz();
    let od = g.out_dim();
    let mut dz = vec![0.0; z.len()];
    let mut da_src = vec![0.0; a_src.len()];
    let mut da_dst = vec![0.0; a_dst.len()];
    let head_scale = match g.merge {
        HeadMerge::Concat => 1.0,
        HeadMerge::Average => 1.0 / g.heads as f64,
    };
    let mut dalpha = Vec::new();
    for b in 0..g.batch {
        for h in 0..g.heads {
            let base = (b * g.heads + h) * nnz;
            let off = match g.merge {
                HeadMerge::Concat => h * d,
                HeadMerge::Average => 0,
            };
            let mut dsd = vec![0.0; g.nodes];
            let mut dss = vec![0.0; g.nodes];
            let mut e = 0;
            for i in 0..g.nodes {
                let gi: Vec<f64> = dout[(b * g.nodes + i) * od + off..][..d]
                    .iter()
                    .map(|v| v * head_scale)
                    .collect();
                dalpha.clear();
                let start = e;
                for (j, _) in pattern.row(i) {
                    let a = cache.alpha[base + e];
                    let zj = (b * g.nodes + j) * w + h * d;
                    let mut dot = 0.0;
                    for k in 0..d {
                        dz[zj + k] += a * gi[k];
                        dot += gi[k] * z[zj + k];
                    }
                    dalpha.push(dot);
                    e += 1;
                }
                let weighted: f64 = dalpha
                    .iter()
                    .zip(&cache.alpha[base + start..base + e])
                    .map(|(da, a)| da * a)
                    .sum();
                for (k, (j, _)) in pattern.row(i).enumerate() {
                    let a = cache.alpha[base + start + k];
                    let de = a * (dalpha[k] - weighted);
                    let p = cache.pre[base + start + k];
                    let dp = if p > 0.0 { de } else { g.slope * de };
                    dsd[i] += dp;
                    dss[j] += dp;
                }
            }
            for i in 0..g.nodes {
                let zi = (b * g.nodes + i) * w + h * d;
                for k in 0..d {
                    dz[zi + k] += dsd[i] * a_dst[h * d + k] + dss[i] * a_src[h * d + k];
                    da_dst[h * d + k] += dsd[i] * z[zi + k];
                    da_src[h * d + k] += dss[i] * z[zi + k];
                }
            }
        }
    }
    (dz, da_src, da_dst)
}
