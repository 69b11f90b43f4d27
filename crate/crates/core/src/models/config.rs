//! Model configurations and the named architecture presets.

use serde::{Deserialize, Serialize};

use crate::digraph::{Alpha, TimeDigraphSpec};
use crate::error::{Error, Result};
use crate::numerics::PoolKind;

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    /// Dilated causal 1-D convolution.
    Tcn,
    /// One graph convolution on the series digraph.
    Gnn,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type")]
pub enum GConvKind {
    Sage,
    Gcn,
    Gat { heads: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkipBlockConfig {
    pub layer_kind: LayerKind,
    /// Output channels of each layer.
    pub channels: Vec<usize>,
    /// Width of the 1×1 convolution after each layer.
    pub skip_dims: Vec<usize>,
    pub kernel_size: usize,
    pub dilations: Vec<usize>,
    /// Graph convolution used by `Gnn` layers.
    pub gconv: GConvKind,
    pub alpha: Alpha,
    pub batch_norm: bool,
    pub dropout: f64,
}

impl SkipBlockConfig {
    /// TCN block with dilations `1, 2, 4, …`.
    pub fn tcn(channels: Vec<usize>, skip_dims: Vec<usize>, kernel_size: usize) -> Self {
        let dilations = (0..channels.len()).map(|i| 1usize << i).collect();
        Self {
            layer_kind: LayerKind::Tcn,
            channels,
            skip_dims,
            kernel_size,
            dilations,
            gconv: GConvKind::Sage,
            alpha: Alpha::H,
            batch_norm: true,
            dropout: 0.1,
        }
    }

    /// Graph block: one Sage convolution per layer, reading past samples.
    pub fn gnn(channels: Vec<usize>, skip_dims: Vec<usize>) -> Self {
        let n = channels.len();
        Self {
            layer_kind: LayerKind::Gnn,
            kernel_size: 1,
            dilations: vec![1; n],
            ..Self::tcn(channels, skip_dims, 1)
        }
    }

    pub fn num_layers(&self) -> usize {
        self.channels.len()
    }

    pub fn out_channels(&self) -> usize {
        self.skip_dims.iter().sum()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.channels.len();
        if n == 0 {
            return Err(Error::InvalidArgument("skip block needs at least one layer".into()));
        }
        if self.skip_dims.len() != n || self.dilations.len() != n {
            return Err(Error::InvalidArgument(format!(
                "{n} layers but {} skip dims and {} dilations",
                self.skip_dims.len(),
                self.dilations.len()
            )));
        }
        if self.channels.iter().chain(&self.skip_dims).any(|&c| c == 0) {
            return Err(Error::InvalidArgument("channel widths must be positive".into()));
        }
        if self.layer_kind == LayerKind::Tcn {
            if self.kernel_size == 0 {
                return Err(Error::InvalidArgument("kernel size must be positive".into()));
            }
            if self.dilations.iter().any(|&d| d == 0) || self.dilations.windows(2).any(|w| w[1] <= w[0]) {
                return Err(Error::InvalidArgument("TCN dilations must be positive and increasing".into()));
            }
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::InvalidArgument(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        validate_gconv(self.gconv)
    }
}

fn validate_gconv(kind: GConvKind) -> Result<()> {
    match kind {
        GConvKind::Gat { heads: 0 } => Err(Error::InvalidArgument("attention needs at least one head".into())),
        _ => Ok(()),
    }
}

/// A chain of graph convolutions, each followed by SiLU.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GConvStackConfig {
    pub kind: GConvKind,
    /// Output width of each convolution.
    pub dims: Vec<usize>,
    pub alpha: Alpha,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Downsample {
    Avg,
    Max,
    /// Mean over each group of `s` consecutive nodes, as message passing
    /// onto the coarse series digraph.
    Graph,
}

impl Downsample {
    pub fn pool_kind(self) -> Option<PoolKind> {
        match self {
            Downsample::Avg => Some(PoolKind::Avg),
            Downsample::Max => Some(PoolKind::Max),
            Downsample::Graph => None,
        }
    }
}

/// Channel-adjusting convolution producing the bottleneck width.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BottleneckConfig {
    pub channels: usize,
    /// 1 for a pointwise convolution; larger kernels are causal with
    /// dilation 1.
    pub kernel_size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub input_channels: usize,
    pub skip: SkipBlockConfig,
    pub post_gconvs: Option<GConvStackConfig>,
    pub bottleneck: Option<BottleneckConfig>,
    pub downsample: Downsample,
    pub shrink: usize,
}

impl EncoderConfig {
    pub fn out_channels(&self) -> usize {
        match (&self.bottleneck, &self.post_gconvs) {
            (Some(b), _) => b.channels,
            (None, Some(g)) if !g.dims.is_empty() => *g.dims.last().unwrap(),
            _ => self.skip.out_channels(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_channels == 0 {
            return Err(Error::InvalidArgument("input channels must be positive".into()));
        }
        if self.shrink == 0 {
            return Err(Error::InvalidArgument("shrink factor must be ≥ 1".into()));
        }
        if let Some(g) = &self.post_gconvs {
            validate_gconv(g.kind)?;
        }
        if self.bottleneck.as_ref().is_some_and(|b| b.channels == 0 || b.kernel_size == 0) {
            return Err(Error::InvalidArgument("bottleneck must have positive width and kernel".into()));
        }
        self.skip.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecoderConfig {
    pub input_channels: usize,
    /// Nearest-neighbour upsampling factor.
    pub upsample: usize,
    pub gconvs: Option<GConvStackConfig>,
    pub skip: SkipBlockConfig,
    pub output_channels: usize,
}

impl DecoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.upsample == 0 || self.input_channels == 0 || self.output_channels == 0 {
            return Err(Error::InvalidArgument("decoder sizes must be positive".into()));
        }
        if let Some(g) = &self.gconvs {
            validate_gconv(g.kind)?;
        }
        self.skip.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Readout {
    Flatten,
    MeanPool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierConfig {
    pub encoder: EncoderConfig,
    pub readout: Readout,
    /// Hidden widths of the MLP head; empty means one linear layer.
    pub mlp_dims: Vec<usize>,
    pub num_classes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AutoencoderConfig {
    pub encoder: EncoderConfig,
    pub decoder: DecoderConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Architecture {
    Classifier(ClassifierConfig),
    Autoencoder(AutoencoderConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub version: u32,
    pub name: String,
    /// Temporal length of one input window.
    pub window_len: usize,
    /// Series digraph built on every full-resolution and coarse window.
    pub graph: TimeDigraphSpec,
    pub architecture: Architecture,
}

impl ModelConfig {
    pub fn encoder(&self) -> &EncoderConfig {
        match &self.architecture {
            Architecture::Classifier(c) => &c.encoder,
            Architecture::Autoencoder(a) => &a.encoder,
        }
    }

    pub fn input_channels(&self) -> usize {
        self.encoder().input_channels
    }

    pub fn is_autoencoder(&self) -> bool {
        matches!(self.architecture, Architecture::Autoencoder(_))
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(Error::Format(format!("unsupported config version {}", self.version)));
        }
        self.graph.validate()?;
        let enc = self.encoder();
        enc.validate()?;
        if self.window_len == 0 || self.window_len % enc.shrink != 0 {
            return Err(Error::InvalidArgument(format!(
                "shrink factor {} does not divide window length {}",
                enc.shrink, self.window_len
            )));
        }
        match &self.architecture {
            Architecture::Classifier(c) => {
                if c.num_classes < 2 || c.mlp_dims.iter().any(|&d| d == 0) {
                    return Err(Error::InvalidArgument("classifier head sizes invalid".into()));
                }
            }
            Architecture::Autoencoder(a) => {
                a.decoder.validate()?;
                if a.decoder.upsample != enc.shrink {
                    return Err(Error::InvalidArgument("decoder upsampling must undo the encoder shrink".into()));
                }
                if a.decoder.input_channels != enc.out_channels() {
                    return Err(Error::InvalidArgument("decoder input width differs from the bottleneck".into()));
                }
                if a.decoder.output_channels != enc.input_channels {
                    return Err(Error::InvalidArgument("reconstruction width differs from the input".into()));
                }
            }
        }
        Ok(())
    }
}

/// Names of the preset architectures.
pub const MODEL_NAMES: [&str; 9] = [
    "TGraphClassifier",
    "TCNGraphClassifier",
    "TCNClassifier",
    "TGraphMixedAE",
    "TGraphAE",
    "TCNGraphAE1",
    "TCNGraphAE2",
    "TCNAE1",
    "TCNAE2",
];

const SUPERVISED_LEN: usize = 640;
const UNSUPERVISED_LEN: usize = 128;
const SUPERVISED_LOOKBACK: usize = 128;
const UNSUPERVISED_LOOKBACK: usize = 25;
const SUPERVISED_KERNEL: usize = 8;
const AE_KERNEL: usize = 7;

fn classifier(
    name: &str,
    skip: SkipBlockConfig,
    post: Option<GConvStackConfig>,
    bottleneck: Option<BottleneckConfig>,
    readout: Readout,
    mlp_dims: Vec<usize>,
) -> ModelConfig {
    ModelConfig {
        version: CONFIG_VERSION,
        name: name.into(),
        window_len: SUPERVISED_LEN,
        graph: TimeDigraphSpec::from_lookback(SUPERVISED_LOOKBACK, 4),
        architecture: Architecture::Classifier(ClassifierConfig {
            encoder: EncoderConfig {
                input_channels: 1,
                skip,
                post_gconvs: post,
                bottleneck,
                downsample: Downsample::Avg,
                shrink: 16,
            },
            readout,
            mlp_dims,
            num_classes: 2,
        }),
    }
}

struct AeSpec {
    layers: usize,
    channels: usize,
    skip_dim: usize,
    bottleneck: usize,
    encoder_kind: LayerKind,
    decoder_kind: LayerKind,
    gconv: Option<(GConvKind, Vec<usize>)>,
    downsample: Downsample,
    shrink: usize,
    d: usize,
}

fn autoencoder(name: &str, s: AeSpec) -> ModelConfig {
    let block = |kind: LayerKind| match kind {
        LayerKind::Tcn => SkipBlockConfig::tcn(vec![s.channels; s.layers], vec![s.skip_dim; s.layers], AE_KERNEL),
        LayerKind::Gnn => SkipBlockConfig::gnn(vec![s.channels; s.layers], vec![s.skip_dim; s.layers]),
    };
    let stack = s.gconv.clone().map(|(kind, dims)| GConvStackConfig {
        kind,
        dims,
        alpha: Alpha::T,
    });
    let encoder = EncoderConfig {
        input_channels: 1,
        skip: block(s.encoder_kind),
        post_gconvs: stack.clone(),
        bottleneck: Some(BottleneckConfig {
            channels: s.bottleneck,
            kernel_size: 1,
        }),
        downsample: s.downsample,
        shrink: s.shrink,
    };
    let decoder = DecoderConfig {
        input_channels: s.bottleneck,
        upsample: s.shrink,
        gconvs: stack,
        skip: block(s.decoder_kind),
        output_channels: 1,
    };
    ModelConfig {
        version: CONFIG_VERSION,
        name: name.into(),
        window_len: UNSUPERVISED_LEN,
        graph: TimeDigraphSpec::from_lookback(UNSUPERVISED_LOOKBACK, s.d),
        architecture: Architecture::Autoencoder(AutoencoderConfig { encoder, decoder }),
    }
}

/// Preset configuration for one of [`MODEL_NAMES`].
pub fn preset(name: &str) -> Result<ModelConfig> {
    let sage = |width: usize| GConvStackConfig {
        kind: GConvKind::Sage,
        dims: vec![width],
        alpha: Alpha::T,
    };
    let gat2 = GConvKind::Gat { heads: 2 };
    let cfg = match name {
        "TGraphClassifier" => classifier(
            name,
            SkipBlockConfig::gnn(vec![32; 4], vec![16; 4]),
            Some(sage(32)),
            Some(BottleneckConfig {
                channels: 16,
                kernel_size: SUPERVISED_KERNEL,
            }),
            Readout::MeanPool,
            vec![],
        ),
        "TCNGraphClassifier" => classifier(
            name,
            SkipBlockConfig::tcn(vec![32; 7], vec![16; 7], SUPERVISED_KERNEL),
            Some(sage(32)),
            Some(BottleneckConfig {
                channels: 2,
                kernel_size: 1,
            }),
            Readout::Flatten,
            vec![],
        ),
        "TCNClassifier" => classifier(
            name,
            SkipBlockConfig::tcn(vec![32; 4], vec![16; 4], SUPERVISED_KERNEL),
            None,
            None,
            Readout::Flatten,
            vec![30, 30],
        ),
        "TGraphMixedAE" => autoencoder(
            name,
            AeSpec {
                layers: 7,
                channels: 64,
                skip_dim: 32,
                bottleneck: 2,
                encoder_kind: LayerKind::Gnn,
                decoder_kind: LayerKind::Tcn,
                gconv: Some((GConvKind::Sage, vec![64])),
                downsample: Downsample::Graph,
                shrink: 16,
                d: 8,
            },
        ),
        "TGraphAE" => autoencoder(
            name,
            AeSpec {
                layers: 4,
                channels: 64,
                skip_dim: 32,
                bottleneck: 2,
                encoder_kind: LayerKind::Gnn,
                decoder_kind: LayerKind::Gnn,
                gconv: Some((gat2, vec![64])),
                downsample: Downsample::Avg,
                shrink: 16,
                d: 4,
            },
        ),
        "TCNGraphAE1" => autoencoder(
            name,
            AeSpec {
                layers: 3,
                channels: 32,
                skip_dim: 16,
                bottleneck: 2,
                encoder_kind: LayerKind::Tcn,
                decoder_kind: LayerKind::Tcn,
                gconv: Some((gat2, vec![100])),
                downsample: Downsample::Graph,
                shrink: 32,
                d: 4,
            },
        ),
        "TCNGraphAE2" => autoencoder(
            name,
            AeSpec {
                layers: 7,
                channels: 64,
                skip_dim: 32,
                bottleneck: 4,
                encoder_kind: LayerKind::Tcn,
                decoder_kind: LayerKind::Tcn,
                gconv: Some((gat2, vec![100])),
                downsample: Downsample::Graph,
                shrink: 32,
                d: 8,
            },
        ),
        "TCNAE1" => autoencoder(
            name,
            AeSpec {
                layers: 3,
                channels: 32,
                skip_dim: 16,
                bottleneck: 2,
                encoder_kind: LayerKind::Tcn,
                decoder_kind: LayerKind::Tcn,
                gconv: None,
                downsample: Downsample::Max,
                shrink: 32,
                d: 4,
            },
        ),
        "TCNAE2" => autoencoder(
            name,
            AeSpec {
                layers: 7,
                channels: 64,
                skip_dim: 32,
                bottleneck: 4,
                encoder_kind: LayerKind::Tcn,
                decoder_kind: LayerKind::Tcn,
                gconv: None,
                downsample: Downsample::Avg,
                shrink: 32,
                d: 8,
            },
        ),
        other => return Err(Error::UnknownModel(other.into())),
    };
    Ok(cfg)
}
