//! Parameterized layers recorded on a tape.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use rand_chacha::ChaCha8Rng;

use super::config::GConvKind;
use crate::digraph::{build_series_digraph, Alpha, TimeDigraphSpec};
use crate::error::Result;
use crate::gconv::{aggregation_matrix, attention_pattern, gat_forward, message_passing_forward, Activation, Normalization};
use crate::numerics::tape::BatchStats;
use crate::numerics::{HeadMerge, ParamId, ParamStore, SparseMatrix, Tape, Tensor, Var};

const BN_MOMENTUM: f64 = 0.1;
const BN_EPS: f64 = 1e-5;
const ATTENTION_SLOPE: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
enum GraphOp {
    Mean(Alpha),
    Sym(Alpha),
    Pattern(Alpha),
    GroupMean(usize),
}

/// Sparse operators of series digraphs, built once per window length.
#[derive(Debug)]
pub struct GraphCache {
    spec: TimeDigraphSpec,
    cache: Mutex<HashMap<(usize, GraphOp), Arc<SparseMatrix>>>,
}

impl GraphCache {
    pub fn new(spec: TimeDigraphSpec) -> Self {
        Self {
            spec,
            cache: Mutex::new(HashMap::new()),
        }
    }

    pub fn spec(&self) -> TimeDigraphSpec {
        self.spec
    }

    fn get(&self, len: usize, op: GraphOp) -> Result<Arc<SparseMatrix>> {
        let mut cache = self.cache.lock().expect("graph cache poisoned");
        if let Some(m) = cache.get(&(len, op)) {
            return Ok(m.clone());
        }
        let mat = match op {
            GraphOp::GroupMean(s) => {
                let triplets: Vec<_> = (0..len).map(|j| (j / s, j, 1.0 / s as f64)).collect();
                SparseMatrix::from_triplets(len / s, len, &triplets)
            }
            _ => {
                let g = build_series_digraph(len, &self.spec)?;
                match op {
                    GraphOp::Mean(a) => aggregation_matrix(&g, a, Normalization::Mean, false)?,
                    GraphOp::Sym(a) => aggregation_matrix(&g, a, Normalization::Sym, true)?,
                    GraphOp::Pattern(a) => attention_pattern(&g, a),
                    GraphOp::GroupMean(_) => unreachable!(),
                }
            }
        };
        let mat = Arc::new(mat);
        cache.insert((len, op), mat.clone());
        Ok(mat)
    }

    /// Mean over consecutive groups of `s` nodes: `len` → `len / s` rows.
    pub fn group_mean(&self, len: usize, s: usize) -> Result<Arc<SparseMatrix>> {
        self.get(len, GraphOp::GroupMean(s))
    }
}

/// Running-statistics update produced by a train-mode batch norm.
#[derive(Debug, Clone)]
pub struct BnUpdate {
    pub mean: ParamId,
    pub var: ParamId,
    pub stats: BatchStats,
}

/// Forward-pass state shared by all layers of one evaluation.
pub struct Ctx<'a> {
    pub tape: &'a mut Tape,
    pub store: &'a ParamStore,
    pub graphs: &'a GraphCache,
    pub bn_updates: Vec<BnUpdate>,
}

impl<'a> Ctx<'a> {
    pub fn new(tape: &'a mut Tape, store: &'a ParamStore, graphs: &'a GraphCache) -> Self {
        Self {
            tape,
            store,
            graphs,
            bn_updates: Vec::new(),
        }
    }

    pub fn p(&mut self, id: ParamId) -> Var {
        self.tape.param(self.store, id)
    }

    fn len_of(&self, x: Var) -> usize {
        self.tape.value(x).dims3().expect("rank-3 activations").1
    }
}

/// Folds batch statistics into the stored running mean and variance.
pub fn apply_bn_updates(store: &mut ParamStore, updates: &[BnUpdate]) {
    for u in updates {
        for (r, s) in store.value_mut(u.mean).data_mut().iter_mut().zip(&u.stats.mean) {
            *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * s;
        }
        for (r, s) in store.value_mut(u.var).data_mut().iter_mut().zip(&u.stats.var) {
            *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * s;
        }
    }
}

/// Builder handing out named, seeded parameters.
pub struct Init<'a> {
    pub store: &'a mut ParamStore,
    pub rng: &'a mut ChaCha8Rng,
}

impl Init<'_> {
    fn uniform(&mut self, name: &str, shape: &[usize], fan_in: usize) -> ParamId {
        self.store.add_uniform(name, shape, fan_in, self.rng)
    }
}

#[derive(Debug, Clone)]
pub struct Conv {
    w: ParamId,
    b: ParamId,
    dilation: usize,
    causal: bool,
}

impl Conv {
    pub fn new(init: &mut Init, name: &str, cin: usize, cout: usize, width: usize, dilation: usize, causal: bool) -> Self {
        let fan_in = cin * width;
        Self {
            w: init.uniform(&format!("{name}.weight"), &[cout, cin, width], fan_in),
            b: init.uniform(&format!("{name}.bias"), &[cout], fan_in),
            dilation,
            causal,
        }
    }

    pub fn pointwise(init: &mut Init, name: &str, cin: usize, cout: usize) -> Self {
        Self::new(init, name, cin, cout, 1, 1, false)
    }

    pub fn forward(&self, ctx: &mut Ctx, x: Var) -> Result<Var> {
        let (w, b) = (ctx.p(self.w), ctx.p(self.b));
        ctx.tape.conv1d(x, w, Some(b), self.dilation, self.causal)
    }
}

#[derive(Debug, Clone)]
pub struct BatchNorm {
    gamma: ParamId,
    beta: ParamId,
    mean: ParamId,
    var: ParamId,
}

impl BatchNorm {
    pub fn new(init: &mut Init, name: &str, ch: usize) -> Self {
        Self {
            gamma: init.store.add(format!("{name}.gamma"), Tensor::full(&[ch], 1.0)),
            beta: init.store.add(format!("{name}.beta"), Tensor::zeros(&[ch])),
            mean: init.store.add_buffer(format!("{name}.running_mean"), Tensor::zeros(&[ch])),
            var: init.store.add_buffer(format!("{name}.running_var"), Tensor::full(&[ch], 1.0)),
        }
    }

    pub fn forward(&self, ctx: &mut Ctx, x: Var) -> Result<Var> {
        let (g, b) = (ctx.p(self.gamma), ctx.p(self.beta));
        let running = (ctx.store.value(self.mean).data(), ctx.store.value(self.var).data());
        let (y, stats) = ctx.tape.batch_norm(x, g, b, running, BN_EPS)?;
        if let Some(stats) = stats {
            ctx.bn_updates.push(BnUpdate {
                mean: self.mean,
                var: self.var,
                stats,
            });
        }
        Ok(y)
    }
}

#[derive(Debug, Clone)]
enum GConvParams {
    Sage { w: ParamId, root: ParamId },
    Gcn { w: ParamId },
    Gat {
        w: ParamId,
        att_src: ParamId,
        att_dst: ParamId,
        heads: usize,
        merge: HeadMerge,
    },
}

/// One graph convolution on the series digraph of the current window.
#[derive(Debug, Clone)]
pub struct GConv {
    params: GConvParams,
    bias: ParamId,
    alpha: Alpha,
}

impl GConv {
    /// Attention layers split `cout` across heads when `merge` is concat
    /// and give every head `cout` features when averaging.
    pub fn new(init: &mut Init, name: &str, kind: GConvKind, alpha: Alpha, cin: usize, cout: usize, merge: HeadMerge) -> Self {
        let params = match kind {
            GConvKind::Sage => GConvParams::Sage {
                w: init.uniform(&format!("{name}.weight"), &[cout, cin, 1], cin),
                root: init.uniform(&format!("{name}.root_weight"), &[cout, cin, 1], cin),
            },
            GConvKind::Gcn => GConvParams::Gcn {
                w: init.uniform(&format!("{name}.weight"), &[cout, cin, 1], cin),
            },
            GConvKind::Gat { heads } => {
                let (merge, head_dim) = match merge {
                    HeadMerge::Concat if cout % heads == 0 => (HeadMerge::Concat, cout / heads),
                    _ => (HeadMerge::Average, cout),
                };
                let width = heads * head_dim;
                GConvParams::Gat {
                    w: init.uniform(&format!("{name}.weight"), &[width, cin, 1], cin),
                    att_src: init.uniform(&format!("{name}.att_src"), &[width], head_dim),
                    att_dst: init.uniform(&format!("{name}.att_dst"), &[width], head_dim),
                    heads,
                    merge,
                }
            }
        };
        Self {
            params,
            bias: init.uniform(&format!("{name}.bias"), &[cout], cin),
            alpha,
        }
    }

    pub fn forward(&self, ctx: &mut Ctx, x: Var) -> Result<Var> {
        let len = ctx.len_of(x);
        let bias = Some(ctx.p(self.bias));
        match self.params {
            GConvParams::Sage { w, root } => {
                let mat = ctx.graphs.get(len, GraphOp::Mean(self.alpha))?;
                let (w, root) = (ctx.p(w), ctx.p(root));
                message_passing_forward(ctx.tape, x, mat, w, Some((root, 1.0)), bias, Activation::Identity)
            }
            GConvParams::Gcn { w } => {
                let mat = ctx.graphs.get(len, GraphOp::Sym(self.alpha))?;
                let w = ctx.p(w);
                message_passing_forward(ctx.tape, x, mat, w, None, bias, Activation::Identity)
            }
            GConvParams::Gat {
                w,
                att_src,
                att_dst,
                heads,
                merge,
            } => {
                let pattern = ctx.graphs.get(len, GraphOp::Pattern(self.alpha))?;
                let (w, s, d) = (ctx.p(w), ctx.p(att_src), ctx.p(att_dst));
                gat_forward(ctx.tape, x, pattern, w, s, d, heads, merge, ATTENTION_SLOPE, bias)
            }
        }
    }
}
