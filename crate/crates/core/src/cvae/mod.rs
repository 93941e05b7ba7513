//! Convolutional variational autoencoder with hand-written reverse mode.
//!
//! Encoder: `conv_layers` × [conv (1,7) stride (1,2), no padding, ReLU] →
//! flatten → affine heads for μ and log σ². Decoder: affine → ReLU →
//! transposed convs mirroring the encoder widths → sigmoid.

mod model;
pub mod ops;
mod train;

pub use model::{
    loss, per_sample_loss, Cvae, CvaeArch, ForwardPass, LossParts, ParamLayout, Params, BCE_CLAMP,
};
pub use train::{
    arch_seed, encode_dataset, read_checkpoint, train, train_ensemble, write_checkpoint, ArchSpec, CheckpointHeader, Dataset,
    EnsembleConfig, EnsembleMember, EpochRecord, LatentSeries, TrainConfig, TrainOutcome,
};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CvaeError {
    #[error("invalid architecture: {0}")]
    InvalidArch(String),
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite activation")]
    NonFiniteActivation,
    #[error("training diverged at epoch {epoch}")]
    Diverged { epoch: usize },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}
