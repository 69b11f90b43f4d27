//! Reverse-mode differentiation over a linear tape of coarse operations.
//!
//! Every operation appends a node whose inputs precede it, so the recorded
//! graph is acyclic by construction and a single reverse sweep suffices.
//! Batched activations use the `[batch, len, channels]` layout throughout.

use std::collections::HashMap;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::attention::{self, AttentionCache, AttentionGeom, HeadMerge};
use super::conv::{self, ConvGeom};
use super::params::{ParamId, ParamStore};
use super::sparse::SparseMatrix;
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolKind {
    Avg,
    Max,
}

/// Batch statistics observed by a train-mode batch norm, for the caller to
/// fold into its running estimates.
#[derive(Debug, Clone)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    /// Unbiased variance.
    pub var: Vec<f64>,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Scale(Var, f64),
    AddBias(Var, Var),
    Silu {
        a: Var,
        /// `σ(a)`, kept for the backward pass.
        sig: Vec<f64>,
    },
    Conv1d {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: ConvGeom,
    },
    Aggregate {
        x: Var,
        mat_t: Arc<SparseMatrix>,
    },
    Attention {
        z: Var,
        a_src: Var,
        a_dst: Var,
        pattern: Arc<SparseMatrix>,
        geom: AttentionGeom,
        cache: AttentionCache,
    },
    Concat(Vec<Var>),
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
        train: bool,
    },
    Mask {
        x: Var,
        mask: Vec<f64>,
    },
    Pool {
        x: Var,
        s: usize,
        kind: PoolKind,
        argmax: Vec<usize>,
    },
    Upsample {
        x: Var,
        s: usize,
    },
    MeanNodes(Var),
    Reshape(Var),
    Softmax(Var),
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        probs: Vec<f64>,
    },
    Mse(Var, Var),
    Sum(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    requires_grad: bool,
    /// Gradient accumulated by `backward`; only kept for leaves.
    grad: Option<Vec<f64>>,
    op: Op,
}

pub struct Tape {
    nodes: Vec<Node>,
    mode: Mode,
    rng: ChaCha8Rng,
    params: HashMap<ParamId, Var>,
}

fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

fn accumulate(slot: &mut Option<Vec<f64>>, g: &[f64]) {
    match slot {
        Some(acc) => acc.iter_mut().zip(g).for_each(|(a, b)| *a += b),
        None => *slot = Some(g.to_vec()),
    }
}

fn accumulate_owned(slot: &mut Option<Vec<f64>>, g: Vec<f64>) {
    match slot {
        Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
        None => *slot = Some(g),
    }
}

impl Tape {
    pub fn new(mode: Mode, seed: u64) -> Self {
        Self {
            nodes: Vec::new(),
            mode,
            rng: ChaCha8Rng::seed_from_u64(seed),
            params: HashMap::new(),
        }
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, requires_grad: bool, op: Op) -> Var {
        self.nodes.push(Node {
            value,
            requires_grad,
            grad: None,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, requires_grad, Op::Leaf)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    /// Loads a parameter as a differentiable leaf; repeated calls return the
    /// same variable.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let v = self.leaf(store.value(id).clone(), store.entry(id).trainable);
        self.params.insert(id, v);
        v
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn grad(&self, v: Var) -> Option<Tensor> {
        let n = &self.nodes[v.0];
        n.grad
            .as_ref()
            .map(|g| Tensor::new(n.value.shape().to_vec(), g.clone()).expect("grad shape"))
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    /// Adds the gradients of every loaded parameter into `store`.
    pub fn write_param_grads(&self, store: &mut ParamStore) {
        for (&id, &v) in &self.params {
            if let Some(g) = &self.nodes[v.0].grad {
                store.accumulate_grad(id, g);
            }
        }
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(Error::Shape(format!("add {:?} vs {:?}", va.shape(), vb.shape())));
        }
        let data = va.data().iter().zip(vb.data()).map(|(x, y)| x + y).collect();
        let t = Tensor::new(va.shape().to_vec(), data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(t, rg, Op::Add(a, b)))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let t = self.value(a).map(|v| v * c);
        let rg = self.rg(a);
        self.push(t, rg, Op::Scale(a, c))
    }

    /// Adds a per-channel bias `[ch]` to every row of `x`.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let ch = *self.value(x).shape().last().unwrap();
        if self.value(b).len() != ch {
            return Err(Error::Shape(format!(
                "bias of length {} for {ch} channels",
                self.value(b).len()
            )));
        }
        let bd = self.value(b).data().to_vec();
        let mut t = self.value(x).clone();
        for row in t.data_mut().chunks_exact_mut(ch) {
            row.iter_mut().zip(&bd).for_each(|(v, b)| *v += b);
        }
        let rg = self.rg(x) || self.rg(b);
        Ok(self.push(t, rg, Op::AddBias(x, b)))
    }

    pub fn silu(&mut self, a: Var) -> Var {
        let va = self.value(a);
        let sig: Vec<f64> = va.data().iter().map(|&v| sigmoid(v)).collect();
        let data = va.data().iter().zip(&sig).map(|(v, s)| v * s).collect();
        let t = Tensor::new(va.shape().to_vec(), data).expect("same shape");
        let rg = self.rg(a);
        let sig = if rg { sig } else { Vec::new() };
        self.push(t, rg, Op::Silu { a, sig })
    }

    /// `x`: `[len, cin]` or `[batch, len, cin]`; `w`: `[cout, cin, width]`;
    /// `b`: `[cout]`. Returns `[batch, len_out, cout]`.
    pub fn conv1d(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        dilation: usize,
        causal: bool,
    ) -> Result<Var> {
        let (batch, len, cin) = self.value(x).dims3()?;
        let ws = self.value(w).shape().to_vec();
        let [cout, wcin, width] = ws[..] else {
            return Err(Error::Shape(format!("kernel must be rank 3, got {ws:?}")));
        };
        if wcin != cin {
            return Err(Error::Shape(format!(
                "conv1d kernel expects {wcin} input channels, got {cin}"
            )));
        }
        if let Some(b) = b {
            if self.value(b).len() != cout {
                return Err(Error::Shape("conv1d bias length differs from out channels".into()));
            }
        }
        let geom = ConvGeom::new(batch, len, cin, cout, width, dilation, causal)?;
        let y = conv::conv1d_forward(
            self.value(x).data(),
            self.value(w).data(),
            b.map(|b| self.value(b).data()),
            &geom,
        );
        let t = Tensor::new(vec![batch, geom.len_out, cout], y)?;
        let rg = self.rg(x) || self.rg(w) || b.is_some_and(|b| self.rg(b));
        Ok(self.push(t, rg, Op::Conv1d { x, w, b, geom }))
    }

    /// Applies `mat` (`rows × len`) to every sample: `[batch, len, ch]` →
    /// `[batch, rows, ch]`.
    pub fn aggregate(&mut self, x: Var, mat: Arc<SparseMatrix>) -> Result<Var> {
        let (batch, len, ch) = self.value(x).dims3()?;
        if mat.cols() != len {
            return Err(Error::Shape(format!(
                "aggregation over {} nodes applied to {len} nodes",
                mat.cols()
            )));
        }
        let y = mat.apply_batched(self.value(x).data(), batch, ch);
        let t = Tensor::new(vec![batch, mat.rows(), ch], y)?;
        let mat_t = Arc::new(mat.transpose());
        let rg = self.rg(x);
        Ok(self.push(t, rg, Op::Aggregate { x, mat_t }))
    }

    /// Multi-head attention aggregation over the sparsity `pattern`.
    /// `z` is `[batch, nodes, heads·head_dim]`; `a_src`, `a_dst` are
    /// `[heads·head_dim]`.
    pub fn attention(
        &mut self,
        z: Var,
        a_src: Var,
        a_dst: Var,
        pattern: Arc<SparseMatrix>,
        heads: usize,
        merge: HeadMerge,
        slope: f64,
    ) -> Result<Var> {
        let (batch, nodes, width) = self.value(z).dims3()?;
        if heads == 0 || width % heads != 0 {
            return Err(Error::Shape(format!("{width} features do not split into {heads} heads")));
        }
        if self.value(a_src).len() != width || self.value(a_dst).len() != width {
            return Err(Error::Shape("attention vector length mismatch".into()));
        }
        if pattern.rows() != nodes || pattern.cols() != nodes {
            return Err(Error::Shape("attention pattern size mismatch".into()));
        }
        let geom = AttentionGeom {
            batch,
            nodes,
            heads,
            head_dim: width / heads,
            merge,
            slope,
        };
        let (out, cache) = attention::attention_forward(
            self.value(z).data(),
            self.value(a_src).data(),
            self.value(a_dst).data(),
            &pattern,
            &geom,
        );
        let t = Tensor::new(vec![batch, nodes, geom.out_dim()], out)?;
        let rg = self.rg(z) || self.rg(a_src) || self.rg(a_dst);
        Ok(self.push(
            t,
            rg,
            Op::Attention {
                z,
                a_src,
                a_dst,
                pattern,
                geom,
                cache,
            },
        ))
    }

    /// Channel-wise concatenation of `[batch, len, c_k]` tensors.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts.first().ok_or_else(|| Error::Empty("concat".into()))?;
        let (batch, len, _) = self.value(*first).dims3()?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (b, l, c) = self.value(p).dims3()?;
            if (b, l) != (batch, len) {
                return Err(Error::Shape("concat over mismatched batch/length".into()));
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut out = vec![0.0; batch * len * total];
        let mut off = 0;
        for (&p, &w) in parts.iter().zip(&widths) {
            let src = self.value(p).data();
            for r in 0..batch * len {
                out[r * total + off..r * total + off + w].copy_from_slice(&src[r * w..(r + 1) * w]);
            }
            off += w;
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        let t = Tensor::new(vec![batch, len, total], out)?;
        Ok(self.push(t, rg, Op::Concat(parts.to_vec())))
    }

    /// Per-channel batch normalization. In train mode the batch statistics
    /// are used and returned; in eval mode `running` supplies mean and
    /// variance.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running: (&[f64], &[f64]),
        eps: f64,
    ) -> Result<(Var, Option<BatchStats>)> {
        let (batch, len, ch) = self.value(x).dims3()?;
        if self.value(gamma).len() != ch || self.value(beta).len() != ch {
            return Err(Error::Shape("batch norm affine parameters mismatch".into()));
        }
        let rows = batch * len;
        let xd = self.value(x).data();
        let train = self.mode == Mode::Train;
        let (mean, var, stats) = if train {
            let mut mean = vec![0.0; ch];
            for r in xd.chunks_exact(ch) {
                mean.iter_mut().zip(r).for_each(|(m, v)| *m += v);
            }
            mean.iter_mut().for_each(|m| *m /= rows as f64);
            let mut var = vec![0.0; ch];
            for r in xd.chunks_exact(ch) {
                for c in 0..ch {
                    var[c] += (r[c] - mean[c]).powi(2);
                }
            }
            let unbiased = var
                .iter()
                .map(|v| if rows > 1 { v / (rows - 1) as f64 } else { 0.0 })
                .collect();
            var.iter_mut().for_each(|v| *v /= rows as f64);
            let stats = BatchStats {
                mean: mean.clone(),
                var: unbiased,
            };
            (mean, var, Some(stats))
        } else {
            (running.0.to_vec(), running.1.to_vec(), None)
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let g = self.value(gamma).data();
        let bt = self.value(beta).data();
        let mut xhat = vec![0.0; xd.len()];
        let mut y = vec![0.0; xd.len()];
        for (r, row) in xd.chunks_exact(ch).enumerate() {
            for c in 0..ch {
                let h = (row[c] - mean[c]) * inv_std[c];
                xhat[r * ch + c] = h;
                y[r * ch + c] = g[c] * h + bt[c];
            }
        }
        let shape = self.value(x).shape().to_vec();
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        let v = self.push(
            Tensor::new(shape, y)?,
            rg,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                train,
            },
        );
        Ok((v, stats))
    }

    /// Inverted dropout; identity in eval mode or at rate 0.
    pub fn dropout(&mut self, x: Var, rate: f64) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::InvalidArgument(format!("dropout rate {rate} outside [0, 1)")));
        }
        if self.mode == Mode::Eval || rate == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 / (1.0 - rate);
        let n = self.value(x).len();
        let mask: Vec<f64> = (0..n)
            .map(|_| if self.rng.gen::<f64>() < rate { 0.0 } else { keep })
            .collect();
        let vx = self.value(x);
        let data = vx.data().iter().zip(&mask).map(|(a, m)| a * m).collect();
        let t = Tensor::new(vx.shape().to_vec(), data)?;
        let rg = self.rg(x);
        Ok(self.push(t, rg, Op::Mask { x, mask }))
    }

    /// Non-overlapping temporal pooling by factor `s`.
    pub fn pool(&mut self, x: Var, s: usize, kind: PoolKind) -> Result<Var> {
        let (batch, len, ch) = self.value(x).dims3()?;
        if s == 0 || len % s != 0 {
            return Err(Error::Shape(format!("shrink factor {s} does not divide length {len}")));
        }
        let lo = len / s;
        let xd = self.value(x).data();
        let mut y = vec![0.0; batch * lo * ch];
        let mut argmax = Vec::new();
        if kind == PoolKind::Max {
            argmax = vec![0; y.len()];
        }
        for b in 0..batch {
            for t in 0..lo {
                for c in 0..ch {
                    let at = |k: usize| (b * len + t * s + k) * ch + c;
                    let o = (b * lo + t) * ch + c;
                    match kind {
                        PoolKind::Avg => {
                            y[o] = (0..s).map(|k| xd[at(k)]).sum::<f64>() / s as f64;
                        }
                        PoolKind::Max => {
                            let mut best = at(0);
                            for k in 1..s {
                                if xd[at(k)] > xd[best] {
                                    best = at(k);
                                }
                            }
                            y[o] = xd[best];
                            argmax[o] = best;
                        }
                    }
                }
            }
        }
        let t = Tensor::new(vec![batch, lo, ch], y)?;
        let rg = self.rg(x);
        Ok(self.push(t, rg, Op::Pool { x, s, kind, argmax }))
    }

    /// Nearest-neighbour temporal upsampling by factor `s`.
    pub fn upsample(&mut self, x: Var, s: usize) -> Result<Var> {
        if s == 0 {
            return Err(Error::InvalidArgument("upsample factor must be ≥ 1".into()));
        }
        let (batch, len, ch) = self.value(x).dims3()?;
        let xd = self.value(x).data();
        let mut y = Vec::with_capacity(batch * len * s * ch);
        for row in xd.chunks_exact(ch) {
            for _ in 0..s {
                y.extend_from_slice(row);
            }
        }
        let t = Tensor::new(vec![batch, len * s, ch], y)?;
        let rg = self.rg(x);
        Ok(self.push(t, rg, Op::Upsample { x, s }))
    }

    /// Mean over the node/time axis: `[batch, len, ch]` → `[batch, 1, ch]`.
    pub fn mean_nodes(&mut self, x: Var) -> Result<Var> {
        let (batch, len, ch) = self.value(x).dims3()?;
        let xd = self.value(x).data();
        let mut y = vec![0.0; batch * ch];
        for b in 0..batch {
            for t in 0..len {
                for c in 0..ch {
                    y[b * ch + c] += xd[(b * len + t) * ch + c] / len as f64;
                }
            }
        }
        let t = Tensor::new(vec![batch, 1, ch], y)?;
        let rg = self.rg(x);
        Ok(self.push(t, rg, Op::MeanNodes(x)))
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        let t = self.value(x).clone().reshape(shape)?;
        let rg = self.rg(x);
        Ok(self.push(t, rg, Op::Reshape(x)))
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, x: Var) -> Var {
        let vx = self.value(x);
        let k = *vx.shape().last().unwrap();
        let mut y = vx.data().to_vec();
        for row in y.chunks_exact_mut(k) {
            softmax_in_place(row);
        }
        let t = Tensor::new(vx.shape().to_vec(), y).expect("same shape");
        let rg = self.rg(x);
        self.push(t, rg, Op::Softmax(x))
    }

    /// Mean cross-entropy of softmax(`logits`) against class indices, one
    /// target per row of the last axis.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let vl = self.value(logits);
        let k = *vl.shape().last().unwrap();
        let rows = vl.len() / k;
        if targets.len() != rows {
            return Err(Error::Shape(format!("{rows} logit rows vs {} targets", targets.len())));
        }
        if let Some(&t) = targets.iter().find(|&&t| t >= k) {
            return Err(Error::InvalidArgument(format!("class {t} outside {k} classes")));
        }
        let mut probs = vl.data().to_vec();
        let mut loss = 0.0;
        for (row, &t) in probs.chunks_exact_mut(k).zip(targets) {
            softmax_in_place(row);
            loss -= row[t].max(f64::MIN_POSITIVE).ln();
        }
        loss /= rows as f64;
        let rg = self.rg(logits);
        Ok(self.push(
            Tensor::scalar(loss),
            rg,
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
            },
        ))
    }

    pub fn mse(&mut self, pred: Var, target: Var) -> Result<Var> {
        let (p, t) = (self.value(pred), self.value(target));
        if p.shape() != t.shape() {
            return Err(Error::Shape(format!("mse {:?} vs {:?}", p.shape(), t.shape())));
        }
        let loss = p
            .data()
            .iter()
            .zip(t.data())
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            / p.len() as f64;
        let rg = self.rg(pred) || self.rg(target);
        Ok(self.push(Tensor::scalar(loss), rg, Op::Mse(pred, target)))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        let rg = self.rg(x);
        self.push(Tensor::scalar(s), rg, Op::Sum(x))
    }

    /// Reverse sweep from a scalar `loss`. Leaf gradients accumulate across
    /// calls until [`Tape::zero_grad`].
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(Error::Shape(format!(
                "backward needs a scalar loss, got {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            if let Op::Leaf = self.nodes[i].op {
                accumulate_owned(&mut self.nodes[i].grad, g);
                continue;
            }
            self.propagate(i, &g, &mut grads);
        }
        Ok(())
    }

    fn propagate(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let val = |v: Var| self.nodes[v.0].value.data();
        let rg = |v: Var| self.nodes[v.0].requires_grad;
        match &node.op {
            Op::Leaf => unreachable!(),
            Op::Add(a, b) => {
                if rg(*a) {
                    accumulate(&mut grads[a.0], g);
                }
                if rg(*b) {
                    accumulate(&mut grads[b.0], g);
                }
            }
            Op::Scale(a, c) => {
                let d: Vec<f64> = g.iter().map(|v| v * c).collect();
                accumulate_owned(&mut grads[a.0], d);
            }
            Op::AddBias(x, b) => {
                if rg(*x) {
                    accumulate(&mut grads[x.0], g);
                }
                if rg(*b) {
                    let ch = self.nodes[b.0].value.len();
                    let mut db = vec![0.0; ch];
                    for row in g.chunks_exact(ch) {
                        db.iter_mut().zip(row).for_each(|(d, v)| *d += v);
                    }
                    accumulate_owned(&mut grads[b.0], db);
                }
            }
            Op::Silu { a, sig } => {
                let d = val(*a)
                    .iter()
                    .zip(sig)
                    .zip(g)
                    .map(|((x, s), gy)| gy * s * (1.0 + x * (1.0 - s)))
                    .collect();
                accumulate_owned(&mut grads[a.0], d);
            }
            Op::Conv1d { x, w, b, geom } => {
                let (dx, dw, db) = conv::conv1d_backward(val(*x), val(*w), g, geom, rg(*x));
                if let Some(dx) = dx {
                    accumulate_owned(&mut grads[x.0], dx);
                }
                if rg(*w) {
                    accumulate_owned(&mut grads[w.0], dw);
                }
                if let Some(b) = b.filter(|b| rg(*b)) {
                    accumulate_owned(&mut grads[b.0], db);
                }
            }
            Op::Aggregate { x, mat_t, .. } => {
                let (batch, _, ch) = node.value.dims3().unwrap();
                let d = mat_t.apply_batched(g, batch, ch);
                accumulate_owned(&mut grads[x.0], d);
            }
            Op::Attention {
                z,
                a_src,
                a_dst,
                pattern,
                geom,
                cache,
            } => {
                let (dz, ds, dd) = attention::attention_backward(
                    val(*z),
                    val(*a_src),
                    val(*a_dst),
                    pattern,
                    geom,
                    cache,
                    g,
                );
                if rg(*z) {
                    accumulate_owned(&mut grads[z.0], dz);
                }
                if rg(*a_src) {
                    accumulate_owned(&mut grads[a_src.0], ds);
                }
                if rg(*a_dst) {
                    accumulate_owned(&mut grads[a_dst.0], dd);
                }
            }
            Op::Concat(parts) => {
                let total = *node.value.shape().last().unwrap();
                let rows = node.value.len() / total;
                let mut off = 0;
                for &p in parts {
                    let w = *self.nodes[p.0].value.shape().last().unwrap();
                    if rg(p) {
                        let mut d = Vec::with_capacity(rows * w);
                        for r in 0..rows {
                            d.extend_from_slice(&g[r * total + off..r * total + off + w]);
                        }
                        accumulate_owned(&mut grads[p.0], d);
                    }
                    off += w;
                }
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                train,
            } => {
                let ch = inv_std.len();
                let rows = g.len() / ch;
                let gm = val(*gamma);
                let mut dgamma = vec![0.0; ch];
                let mut dbeta = vec![0.0; ch];
                for r in 0..rows {
                    for c in 0..ch {
                        dgamma[c] += g[r * ch + c] * xhat[r * ch + c];
                        dbeta[c] += g[r * ch + c];
                    }
                }
                if rg(*x) {
                    let mut dx = vec![0.0; g.len()];
                    for r in 0..rows {
                        for c in 0..ch {
                            let k = r * ch + c;
                            dx[k] = if *train {
                                // dxhat = g·γ; Σ dxhat = γ·dβ; Σ dxhat·xhat = γ·dγ
                                gm[c] * inv_std[c] / rows as f64
                                    * (rows as f64 * g[k] - dbeta[c] - xhat[k] * dgamma[c])
                            } else {
                                g[k] * gm[c] * inv_std[c]
                            };
                        }
                    }
                    accumulate_owned(&mut grads[x.0], dx);
                }
                if rg(*gamma) {
                    accumulate_owned(&mut grads[gamma.0], dgamma);
                }
                if rg(*beta) {
                    accumulate_owned(&mut grads[beta.0], dbeta);
                }
            }
            Op::Mask { x, mask } => {
                let d = g.iter().zip(mask).map(|(a, m)| a * m).collect();
                accumulate_owned(&mut grads[x.0], d);
            }
            Op::Pool { x, s, kind, argmax } => {
                let (batch, lo, ch) = node.value.dims3().unwrap();
                let mut d = vec![0.0; batch * lo * s * ch];
                match kind {
                    PoolKind::Avg => {
                        for b in 0..batch {
                            for t in 0..lo {
                                for c in 0..ch {
                                    let gv = g[(b * lo + t) * ch + c] / *s as f64;
                                    for k in 0..*s {
                                        d[(b * lo * s + t * s + k) * ch + c] += gv;
                                    }
                                }
                            }
                        }
                    }
                    PoolKind::Max => {
                        for (o, &src) in argmax.iter().enumerate() {
                            d[src] += g[o];
                        }
                    }
                }
                accumulate_owned(&mut grads[x.0], d);
            }
            Op::Upsample { x, s } => {
                let (_, _, ch) = node.value.dims3().unwrap();
                let n_in = self.nodes[x.0].value.len() / ch;
                let mut d = vec![0.0; n_in * ch];
                for r in 0..n_in {
                    for k in 0..*s {
                        for c in 0..ch {
                            d[r * ch + c] += g[(r * s + k) * ch + c];
                        }
                    }
                }
                accumulate_owned(&mut grads[x.0], d);
            }
            Op::MeanNodes(x) => {
                let (batch, len, ch) = self.nodes[x.0].value.dims3().unwrap();
                let mut d = vec![0.0; batch * len * ch];
                for b in 0..batch {
                    for t in 0..len {
                        for c in 0..ch {
                            d[(b * len + t) * ch + c] = g[b * ch + c] / len as f64;
                        }
                    }
                }
                accumulate_owned(&mut grads[x.0], d);
            }
            Op::Reshape(x) => accumulate(&mut grads[x.0], g),
            Op::Softmax(x) => {
                let y = node.value.data();
                let k = *node.value.shape().last().unwrap();
                let mut d = vec![0.0; y.len()];
                for ((dr, yr), gr) in d.chunks_exact_mut(k).zip(y.chunks_exact(k)).zip(g.chunks_exact(k)) {
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for j in 0..k {
                        dr[j] = yr[j] * (gr[j] - dot);
                    }
                }
                accumulate_owned(&mut grads[x.0], d);
            }
            Op::CrossEntropy {
                logits,
                targets,
                probs,
            } => {
                let k = *self.nodes[logits.0].value.shape().last().unwrap();
                let rows = targets.len() as f64;
                let mut d = probs.clone();
                for (row, &t) in d.chunks_exact_mut(k).zip(targets) {
                    row[t] -= 1.0;
                    row.iter_mut().for_each(|v| *v *= g[0] / rows);
                }
                accumulate_owned(&mut grads[logits.0], d);
            }
            Op::Mse(a, b) => {
                let (pa, pb) = (val(*a), val(*b));
                let c = 2.0 * g[0] / pa.len() as f64;
                let d: Vec<f64> = pa.iter().zip(pb).map(|(x, y)| c * (x - y)).collect();
                if rg(*b) {
                    accumulate_owned(&mut grads[b.0], d.iter().map(|v| -v).collect());
                }
                if rg(*a) {
                    accumulate_owned(&mut grads[a.0], d);
                }
            }
            Op::Sum(x) => {
                let n = self.nodes[x.0].value.len();
                accumulate_owned(&mut grads[x.0], vec![g[0]; n]);
            }
        }
    }
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    row.iter_mut().for_each(|v| *v /= total);
}
