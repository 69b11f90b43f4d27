use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::blocks::{Decoder, Encoder};
use super::config::{Architecture, ModelConfig, Readout};
use super::layers::{BnUpdate, Conv, Ctx, GraphCache, Init};
use crate::error::{Error, Result};
use crate::numerics::{Mode, ParamStore, Tape, Tensor, Var};

#[derive(Debug, Clone)]
struct ClassifierNet {
    encoder: Encoder,
    readout: Readout,
    mlp: Vec<Conv>,
    num_classes: usize,
}

#[derive(Debug, Clone)]
struct AutoencoderNet {
    encoder: Encoder,
    decoder: Decoder,
}

#[derive(Debug, Clone)]
enum Net {
    Classifier(ClassifierNet),
    Autoencoder(AutoencoderNet),
}

/// A built model: configuration, parameters and layer wiring.
#[derive(Debug)]
pub struct Model {
    config: ModelConfig,
    pub store: ParamStore,
    net: Net,
    graphs: GraphCache,
}

/// Output of a recorded forward pass.
pub struct Forward {
    /// Logits `[batch, classes]` or reconstruction `[batch, len, ch]`.
    pub output: Var,
    pub bn_updates: Vec<BnUpdate>,
}

impl Model {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut init = Init {
            store: &mut store,
            rng: &mut rng,
        };
        let net = match &config.architecture {
            Architecture::Classifier(c) => {
                let encoder = Encoder::new(&mut init, &c.encoder)?;
                let width = c.encoder.out_channels();
                let mut din = match c.readout {
                    Readout::MeanPool => width,
                    Readout::Flatten => width * config.window_len / c.encoder.shrink,
                };
                let mut mlp = Vec::new();
                for (i, &d) in c.mlp_dims.iter().chain(std::iter::once(&c.num_classes)).enumerate() {
                    mlp.push(Conv::pointwise(&mut init, &format!("head.{i}"), din, d));
                    din = d;
                }
                Net::Classifier(ClassifierNet {
                    encoder,
                    readout: c.readout,
                    mlp,
                    num_classes: c.num_classes,
                })
            }
            Architecture::Autoencoder(a) => Net::Autoencoder(AutoencoderNet {
                encoder: Encoder::new(&mut init, &a.encoder)?,
                decoder: Decoder::new(&mut init, &a.decoder)?,
            }),
        };
        let graphs = GraphCache::new(config.graph);
        Ok(Self {
            config,
            store,
            net,
            graphs,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn num_params(&self) -> usize {
        self.store.count_scalars()
    }

    pub fn is_autoencoder(&self) -> bool {
        matches!(self.net, Net::Autoencoder(_))
    }

    /// Records the forward pass of `x: [batch, len, ch]` on `tape`.
    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Forward> {
        let (_, len, ch) = tape.value(x).dims3()?;
        if ch != self.config.input_channels() {
            return Err(Error::Shape(format!(
                "{ch} input channels for a model expecting {}",
                self.config.input_channels()
            )));
        }
        let mut ctx = Ctx::new(tape, &self.store, &self.graphs);
        let output = match &self.net {
            Net::Classifier(c) => {
                if c.readout == Readout::Flatten && len != self.config.window_len {
                    return Err(Error::Shape(format!(
                        "flatten readout expects windows of {} samples, got {len}",
                        self.config.window_len
                    )));
                }
                let z = c.encoder.forward(&mut ctx, x)?;
                let (batch, lz, cz) = ctx.tape.value(z).dims3()?;
                let mut h = match c.readout {
                    Readout::MeanPool => ctx.tape.mean_nodes(z)?,
                    Readout::Flatten => ctx.tape.reshape(z, vec![batch, 1, lz * cz])?,
                };
                for (i, layer) in c.mlp.iter().enumerate() {
                    h = layer.forward(&mut ctx, h)?;
                    if i + 1 < c.mlp.len() {
                        h = ctx.tape.silu(h);
                    }
                }
                ctx.tape.reshape(h, vec![batch, c.num_classes])?
            }
            Net::Autoencoder(a) => {
                let z = a.encoder.forward(&mut ctx, x)?;
                a.decoder.forward(&mut ctx, z)?
            }
        };
        Ok(Forward {
            output,
            bn_updates: ctx.bn_updates,
        })
    }

    fn eval(&self, x: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new(Mode::Eval, 0);
        let xv = tape.constant(as_batch(x)?);
        let f = self.forward(&mut tape, xv)?;
        Ok(tape.value(f.output).clone())
    }

    /// Class probabilities `[batch, classes]` in eval mode.
    pub fn predict_proba(&self, x: &Tensor) -> Result<Tensor> {
        if self.is_autoencoder() {
            return Err(Error::InvalidArgument("autoencoders do not output class probabilities".into()));
        }
        let mut tape = Tape::new(Mode::Eval, 0);
        let xv = tape.constant(as_batch(x)?);
        let f = self.forward(&mut tape, xv)?;
        let p = tape.softmax(f.output);
        Ok(tape.value(p).clone())
    }

    /// Reconstruction `[batch, len, ch]` in eval mode.
    pub fn reconstruct(&self, x: &Tensor) -> Result<Tensor> {
        if !self.is_autoencoder() {
            return Err(Error::InvalidArgument("classifiers do not reconstruct".into()));
        }
        self.eval(x)
    }
}

fn as_batch(x: &Tensor) -> Result<Tensor> {
    let (b, l, c) = x.dims3()?;
    x.clone().reshape(vec![b, l, c])
}

/// Trainable scalar count of the model `cfg` builds.
pub fn count_params(cfg: &ModelConfig) -> Result<usize> {
    Ok(Model::new(cfg.clone(), 0)?.num_params())
}
