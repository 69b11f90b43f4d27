//! Skip-connections block, encoder and decoder.

use super::config::{DecoderConfig, Downsample, EncoderConfig, GConvStackConfig, LayerKind, SkipBlockConfig};
use super::layers::{BatchNorm, Conv, Ctx, GConv, Init};
use crate::error::{Error, Result};
use crate::numerics::{HeadMerge, Var};

/// Per-layer main operation of a skip block.
#[derive(Debug, Clone)]
enum MainLayer {
    Tcn(Conv),
    Gnn(GConv),
}

#[derive(Debug, Clone)]
struct SkipLayer {
    main: MainLayer,
    main_bn: Option<BatchNorm>,
    skip: Conv,
    skip_bn: Option<BatchNorm>,
}

/// `n` layers; after each, a 1×1 convolution to the skip width. The skip
/// outputs are concatenated along channels.
#[derive(Debug, Clone)]
pub struct SkipBlock {
    layers: Vec<SkipLayer>,
    dropout: f64,
}

impl SkipBlock {
    pub fn new(init: &mut Init, name: &str, cfg: &SkipBlockConfig, cin: usize) -> Result<Self> {
        cfg.validate()?;
        let mut layers = Vec::with_capacity(cfg.num_layers());
        let mut c = cin;
        for k in 0..cfg.num_layers() {
            let (cout, sd) = (cfg.channels[k], cfg.skip_dims[k]);
            let lname = format!("{name}.{k}");
            let main = match cfg.layer_kind {
                LayerKind::Tcn => MainLayer::Tcn(Conv::new(
                    init,
                    &format!("{lname}.conv"),
                    c,
                    cout,
                    cfg.kernel_size,
                    cfg.dilations[k],
                    true,
                )),
                LayerKind::Gnn => MainLayer::Gnn(GConv::new(
                    init,
                    &format!("{lname}.gconv"),
                    cfg.gconv,
                    cfg.alpha,
                    c,
                    cout,
                    HeadMerge::Concat,
                )),
            };
            let bn = |init: &mut Init, suffix: &str, ch: usize| {
                cfg.batch_norm
                    .then(|| BatchNorm::new(init, &format!("{lname}.{suffix}"), ch))
            };
            let main_bn = bn(init, "bn", cout);
            let skip = Conv::pointwise(init, &format!("{lname}.skip"), cout, sd);
            let skip_bn = bn(init, "skip_bn", sd);
            layers.push(SkipLayer {
                main,
                main_bn,
                skip,
                skip_bn,
            });
            c = cout;
        }
        Ok(Self {
            layers,
            dropout: cfg.dropout,
        })
    }

    fn post(&self, ctx: &mut Ctx, x: Var, bn: &Option<BatchNorm>) -> Result<Var> {
        let mut y = ctx.tape.silu(x);
        if let Some(bn) = bn {
            y = bn.forward(ctx, y)?;
        }
        ctx.tape.dropout(y, self.dropout)
    }

    pub fn forward(&self, ctx: &mut Ctx, x: Var) -> Result<Var> {
        let mut h = x;
        let mut outs = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let z = match &layer.main {
                MainLayer::Tcn(c) => c.forward(ctx, h)?,
                MainLayer::Gnn(g) => g.forward(ctx, h)?,
            };
            h = self.post(ctx, z, &layer.main_bn)?;
            let s = layer.skip.forward(ctx, h)?;
            outs.push(self.post(ctx, s, &layer.skip_bn)?);
        }
        ctx.tape.concat(&outs)
    }
}

/// Graph convolutions in sequence, each followed by SiLU. Attention heads
/// are concatenated in hidden layers and averaged in the last one.
#[derive(Debug, Clone)]
pub struct GConvStack {
    layers: Vec<GConv>,
}

impl GConvStack {
    pub fn new(init: &mut Init, name: &str, cfg: &GConvStackConfig, cin: usize) -> Self {
        let mut c = cin;
        let n = cfg.dims.len();
        let layers = cfg
            .dims
            .iter()
            .enumerate()
            .map(|(i, &cout)| {
                let merge = if i + 1 < n { HeadMerge::Concat } else { HeadMerge::Average };
                let g = GConv::new(init, &format!("{name}.{i}"), cfg.kind, cfg.alpha, c, cout, merge);
                c = cout;
                g
            })
            .collect();
        Self { layers }
    }

    pub fn forward(&self, ctx: &mut Ctx, x: Var) -> Result<Var> {
        let mut h = x;
        for g in &self.layers {
            let z = g.forward(ctx, h)?;
            h = ctx.tape.silu(z);
        }
        Ok(h)
    }
}

#[derive(Debug, Clone)]
pub struct Encoder {
    skip: SkipBlock,
    post: Option<GConvStack>,
    bottleneck: Option<Conv>,
    downsample: Downsample,
    shrink: usize,
}

impl Encoder {
    pub fn new(init: &mut Init, cfg: &EncoderConfig) -> Result<Self> {
        cfg.validate()?;
        let skip = SkipBlock::new(init, "encoder.skip", &cfg.skip, cfg.input_channels)?;
        let mut c = cfg.skip.out_channels();
        let post = cfg.post_gconvs.as_ref().map(|g| {
            let s = GConvStack::new(init, "encoder.gconv", g, c);
            c = g.dims.last().copied().unwrap_or(c);
            s
        });
        let bottleneck = cfg
            .bottleneck
            .as_ref()
            .map(|b| Conv::new(init, "encoder.bottleneck", c, b.channels, b.kernel_size, 1, true));
        Ok(Self {
            skip,
            post,
            bottleneck,
            downsample: cfg.downsample,
            shrink: cfg.shrink,
        })
    }

    /// `[batch, len, cin]` → `[batch, len / s, bottleneck]`.
    pub fn forward(&self, ctx: &mut Ctx, x: Var) -> Result<Var> {
        let len = ctx.tape.value(x).dims3()?.1;
        if len % self.shrink != 0 {
            return Err(Error::Shape(format!(
                "shrink factor {} does not divide length {len}",
                self.shrink
            )));
        }
        let mut h = self.skip.forward(ctx, x)?;
        if let Some(p) = &self.post {
            h = p.forward(ctx, h)?;
        }
        if let Some(b) = &self.bottleneck {
            h = b.forward(ctx, h)?;
        }
        if self.shrink == 1 {
            return Ok(h);
        }
        match self.downsample.pool_kind() {
            Some(kind) => ctx.tape.pool(h, self.shrink, kind),
            None => {
                let mat = ctx.graphs.group_mean(len, self.shrink)?;
                ctx.tape.aggregate(h, mat)
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct Decoder {
    upsample: usize,
    gconvs: Option<GConvStack>,
    skip: SkipBlock,
    out: Conv,
}

impl Decoder {
    pub fn new(init: &mut Init, cfg: &DecoderConfig) -> Result<Self> {
        cfg.validate()?;
        let mut c = cfg.input_channels;
        let gconvs = cfg.gconvs.as_ref().map(|g| {
            let s = GConvStack::new(init, "decoder.gconv", g, c);
            c = g.dims.last().copied().unwrap_or(c);
            s
        });
        let skip = SkipBlock::new(init, "decoder.skip", &cfg.skip, c)?;
        let out = Conv::pointwise(init, "decoder.out", cfg.skip.out_channels(), cfg.output_channels);
        Ok(Self {
            upsample: cfg.upsample,
            gconvs,
            skip,
            out,
        })
    }

    /// `[batch, len / s, bottleneck]` → `[batch, len, cout]`.
    pub fn forward(&self, ctx: &mut Ctx, z: Var) -> Result<Var> {
        let mut h = ctx.tape.upsample(z, self.upsample)?;
        if let Some(g) = &self.gconvs {
            h = g.forward(ctx, h)?;
        }
        let h = self.skip.forward(ctx, h)?;
        self.out.forward(ctx, h)
    }
}
