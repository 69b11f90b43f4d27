//! Encoder/decoder building blocks, the classifier and autoencoder models,
//! training and persistence.
//!
//! Activations are `[batch, len, ch]`. A batch is a disjoint union of
//! identical series digraphs, one per window, so graph layers apply the
//! same sparse operator to every sample.

mod blocks;
mod config;
mod gradcheck;
mod io;
mod layers;
mod model;
mod train;

pub use blocks::{Decoder, Encoder, GConvStack, SkipBlock};
pub use config::{
    preset, Architecture, AutoencoderConfig, BottleneckConfig, ClassifierConfig, DecoderConfig, Downsample,
    EncoderConfig, GConvKind, GConvStackConfig, LayerKind, ModelConfig, Readout, SkipBlockConfig, CONFIG_VERSION,
    MODEL_NAMES,
};
pub use gradcheck::{check_param_gradients, ParamCheckReport};
pub use io::{decode_params, encode_params, load_model, save_model, Manifest, ManifestEntry};
pub use layers::{apply_bn_updates, BnUpdate, Conv, Ctx, GraphCache, Init};
pub use model::{count_params, Forward, Model};
pub use train::{predict_classes, reconstruct_windows, stack_windows, train, TrainConfig, TrainHistory};
