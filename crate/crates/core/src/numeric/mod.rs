//! Dense tensors, a reverse-mode tape, Adam, and a finite-difference checker.

mod adam;
mod checkpoint;
mod gradcheck;
mod graph;
mod params;
mod tensor;

pub use adam::{Adam, AdamConfig};
pub use checkpoint::{
    read_checkpoint, read_checkpoint_from, write_checkpoint, write_checkpoint_to, Checkpoint, CHECKPOINT_MAGIC,
};
pub use gradcheck::{grad_check, relative_error, GradCheckReport};
pub use graph::{AttentionLayout, Gradients, Graph, KinkSignature, NodeId};
pub use params::ParamStore;
pub use tensor::{gelu, gelu_grad, sigmoid, softmax, softmax_in_place, Real, Tensor};

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum NumericError {
    #[error("{op}: incompatible shapes {left:?} and {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("loss must be a scalar, got shape {0:?}")]
    NonScalar(Vec<usize>),
    #[error("unknown parameter {0:?}")]
    MissingParam(String),
    #[error("duplicate parameter {0:?}")]
    DuplicateParam(String),
    #[error("{0}")]
    InvalidArgument(String),
}
