//! Differentiable layers over `batch x channels x z x y x x` activations.

mod conv;
pub mod gradcheck;
mod kernels;
mod params;
mod tape;
mod tensor;

use thiserror::Error;

pub use self::params::{Param, ParamId, ParamKind, ParamStore};
pub use self::tape::{BatchNormMode, BatchStats, Gradients, NodeId, Tape};
pub use self::tensor::{Activation, Tensor};

/// Momentum used to fold batch statistics into running estimates.
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum NnError {
    #[error("{layer}: expected {expected} channels, got {actual}")]
    ChannelMismatch {
        layer: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("{layer}: spatial extent {spatial:?} must be even")]
    OddExtent { layer: &'static str, spatial: [usize; 3] },
    #[error("{layer}: spatial extent {spatial:?} is smaller than the kernel")]
    ExtentTooSmall { layer: &'static str, spatial: [usize; 3] },
    #[error("{layer}: unsupported kernel shape {shape:?}")]
    KernelShape { layer: &'static str, shape: [usize; 5] },
    #[error("{layer}: shapes {left:?} and {right:?} are incompatible")]
    ShapeMismatch {
        layer: &'static str,
        left: [usize; 5],
        right: [usize; 5],
    },
    #[error("expected {expected} values, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("label {value} at voxel {index} is not a valid class")]
    LabelOutOfRange { index: usize, value: u8 },
    #[error("tensor of shape {0:?} is not a scalar")]
    NotScalar([usize; 5]),
    #[error("backward was already run on this tape")]
    TapeConsumed,
    #[error("max-unpooling needs a max-pooling node")]
    NotAPoolNode,
    #[error("empty batch")]
    EmptyBatch,
}
