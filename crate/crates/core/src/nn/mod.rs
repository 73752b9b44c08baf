//! Layer kernels and the sequential network that chains them.

mod layers;
mod network;
mod spec;

pub use layers::{
    avgpool_backward, avgpool_forward, batchnorm_backward, batchnorm_forward, conv2d_backward,
    conv2d_forward, conv2d_same_forward, fully_connected_backward, fully_connected_forward,
    mse_loss, mse_loss_grad, relu_backward, relu_forward, BatchNormCache, BatchNormConfig,
    BatchNormOutput, BatchNormParams, ConvGrads, DenseGrads,
};
pub use network::{ForwardCache, Gradients, LayerParams, Network};
pub use spec::{activation_shapes, LayerSpec, NetworkSpec, Normalization, Padding};

use thiserror::Error;

use crate::tensor::Shape4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Mode {
    Train,
    Inference,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NnError {
    #[error("tensor has a zero dimension")]
    EmptyTensor,
    #[error("channel mismatch: expected {expected}, found {found}")]
    ChannelMismatch { expected: usize, found: usize },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimMismatch { expected: usize, found: usize },
    #[error("length mismatch: expected {expected}, found {found}")]
    LengthMismatch { expected: usize, found: usize },
    #[error("sample index {index} out of range for batch of {len}")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("pool window {pool:?} larger than input {input:?}")]
    PoolLargerThanInput {
        pool: (usize, usize),
        input: (usize, usize),
    },
    #[error("layer {layer}: expected input {expected}, found {found}")]
    ShapeMismatch {
        layer: usize,
        expected: Shape4,
        found: Shape4,
    },
    #[error("layer {layer}: output dimension would drop below 1")]
    ShapeUnderflow { layer: usize },
    #[error("invalid network spec: {0}")]
    InvalidSpec(String),
    #[error("forward cache is stale or was not produced in train mode")]
    StaleCache,
}
