//! Tensors, reverse-mode differentiation, layers and optimization.

pub mod checkpoint;
pub mod gradcheck;
pub mod kernels;
pub mod layers;
pub mod optim;
pub mod params;
mod scalar;
pub mod tape;
mod tensor;
pub mod train;

pub use checkpoint::{Checkpoint, CheckpointHeader, TensorInfo};
pub use optim::{lr_at_epoch, AdamW, TrainConfig};
pub use params::{ParamEntry, ParamId, ParamKind, ParamStore};
pub use scalar::Scalar;
pub use tape::{apply_bn_updates, BnParams, BnUpdate, Gradients, Mode, Tape, Var};
pub use tensor::Tensor;
pub use train::{fit, EarlyStopping, EpochRecord, StopDecision, TrainHistory};
