//! A small convolutional classifier with hand-written gradients, AdamW,
//! per-block freezing and a flat binary format.

mod format;
mod network;
mod spec;
mod train;

pub use format::{read_model, write_model, FORMAT_VERSION, MAGIC};
pub use network::{
    forward, init_model, loss_and_gradient, training_loss, BatchNormParams, BlockGradient, BlockParams, ModelState,
};
pub use spec::{Activation, BlockKind, BlockSpec, NetworkSpec, Shape};
pub use train::{
    adaptation_subset, evaluate, fine_tune, predict, train, Evaluation, OptimizerConfig, TrainReport,
};
pub(crate) use train::{evaluate_refs, fine_tune_refs, train_refs_with};
