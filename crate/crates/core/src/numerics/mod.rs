//! Dense tensors, reverse-mode differentiation and the neural-network
//! primitives the models are built from.

pub mod adam;
pub mod attention;
pub mod conv;
pub mod gradcheck;
pub mod ops;
pub mod params;
pub mod sparse;
pub mod tape;
pub mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use attention::HeadMerge;
pub use conv::Conv1dParams;
pub use gradcheck::{finite_diff_check, finite_diff_check_with, GradCheckOptions, GradCheckReport};
pub use ops::{conv1d, mse_loss, norm_dropout, pool_shrink, silu, upsample_nearest, BatchNormState};
pub use params::{ParamId, ParamStore};
pub use sparse::SparseMatrix;
pub use tape::{Mode, PoolKind, Tape, Var};
pub use tensor::Tensor;
