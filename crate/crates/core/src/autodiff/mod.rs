//! Minimal reverse-mode automatic differentiation over dense tensors.
//!
//! A [`Tape`] records every operation of one forward pass; [`Tape::backward`]
//! walks it once in reverse. The operator set is exactly what the models
//! need: dense, conv1d, relu, dropout, flatten/reshape, concat, softmax
//! cross-entropy and the three Poincaré-ball maps.

mod gemm;
mod scalar;
mod tape;
mod tensor;

pub use gemm::{matmul, MatRef};
pub use scalar::Scalar;
pub use tape::{Tape, Var};
pub use tensor::Tensor;

use thiserror::Error;

use crate::hypergeom::GeomError;

#[derive(Debug, Error)]
pub enum AutodiffError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("label {label} is out of range for {classes} classes")]
    InvalidLabel { label: usize, classes: usize },
    #[error("backward already ran on this tape; call zero_grad first")]
    StaleTape,
    #[error("backward needs a scalar loss, got shape {0:?}")]
    NotScalar(Vec<usize>),
    #[error(transparent)]
    Geometry(#[from] GeomError),
}

pub type Result<T, E = AutodiffError> = std::result::Result<T, E>;
