//! Feed-forward networks (dense, 2-D convolution, max-pool) with
//! softmax/cross-entropy output and backpropagation over a flat parameter
//! vector.

mod layers;
mod network;
mod scalar;
mod spec;

pub use layers::{backward_maxpool, conv2d_valid, forward_maxpool, softmax, PoolOutput};
pub use network::{Forward, LayerParams, Network, ParamBlock, ParamKind, Workspace};
pub use scalar::Scalar;
pub use spec::{Activation, LayerSpec, NetworkSpec, Shape};

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum NnError {
    #[error("invalid network: {0}")]
    InvalidSpec(String),
    #[error("pool window {window:?} larger than input {input:?}")]
    WindowTooLarge {
        window: (usize, usize),
        input: (usize, usize),
    },
    #[error("parameter vector has length {actual}, network needs {expected}")]
    ParamLength { expected: usize, actual: usize },
    #[error("input has {actual} features per example, network expects {expected}")]
    InputShape { expected: usize, actual: usize },
    #[error("empty batch")]
    EmptyBatch,
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: u8, classes: usize },
}

/// A mini-batch: row-major inputs (`labels.len()` rows) and class labels.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Batch<T> {
    pub inputs: Vec<T>,
    pub labels: Vec<u8>,
}

impl<T: Scalar> Batch<T> {
    pub fn new(inputs: Vec<T>, labels: Vec<u8>) -> Self {
        Batch { inputs, labels }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn clear(&mut self) {
        self.inputs.clear();
        self.labels.clear();
    }
}
