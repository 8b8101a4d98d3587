//! Tensor and network engine for the binary and three-class CNNs.

pub mod adam;
pub mod checkpoint;
pub mod descriptor;
pub mod gradcheck;
pub mod layers;
pub mod loss;
pub mod network;
pub mod tensor;

pub use adam::{adam_update, AdamConfig, AdamState};
pub use checkpoint::{load_checkpoint, load_checkpoint_as, save_checkpoint, CheckpointHeader};
pub use descriptor::{ArchitectureDescriptor, ConvBlock, LayerKind, ParamSpec, Variant, THREE_CLASSES};
pub use loss::{loss, LossOutput, LossWeights, Targets};
pub use network::{grids_to_dense, ForwardCache, Input, NamedTensor, Network, Predictions};
pub use tensor::{Scalar, Tensor};

#[derive(Debug, thiserror::Error)]
pub enum NetError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid descriptor: {0}")]
    InvalidDescriptor(String),
    #[error("backward called without cached activations")]
    MissingCache,
    #[error("non-finite values in {0}")]
    NonFinite(String),
    #[error("not a checkpoint (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    VersionMismatch(u8),
    #[error("checkpoint truncated")]
    Truncated,
    #[error("bad checkpoint header: {0}")]
    BadHeader(String),
}
