//! Dense tensors and the reverse-mode differentiation engine.
//!
//! [`Tensor`] is the universal value: a row-major `f64` array with a shape
//! and an optional gradient buffer. Differentiable computation runs on a
//! [`Tape`], which records every operation touching a grad-requiring leaf
//! and replays the chain rule in reverse on [`Tape::backward`].

mod adam;
mod check;
mod tape;

pub use adam::{adam_step, AdamState};
pub use check::{grad_check, grad_check_params, CheckReport, FD_STEP};
pub use tape::{ConvMode, ElementwiseKind, LossKind, Padding, Tape, Var};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite input value")]
    NonFiniteInput,
    #[error("invalid stride {0}; stride must be >= 1")]
    InvalidStride(usize),
    #[error("backward root must be a scalar")]
    NotScalar,
    #[error("root does not participate in any recorded tape")]
    DetachedTape,
    #[error("parameter {0} has no gradient")]
    MissingGradient(usize),
    #[error("domain error: {0}")]
    DomainError(String),
    #[error("unknown elementwise kind `{0}`")]
    UnknownKind(String),
}

/// Dense N-dimensional array of 64-bit floats, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    grad: Option<Vec<f64>>,
    requires_grad: bool,
}

impl Tensor {
    /// Build a tensor from a shape and flat values. The values are copied;
    /// mutating the result never aliases the input.
    pub fn new(shape: &[usize], values: &[f64], requires_grad: bool) -> Result<Self, TensorError> {
        let numel: usize = shape.iter().product();
        if numel != values.len() {
            return Err(TensorError::ShapeMismatch(format!(
                "shape {:?} holds {} elements but {} values were given",
                shape,
                numel,
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(TensorError::NonFiniteInput);
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data: values.to_vec(),
            grad: None,
            requires_grad,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let numel: usize = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; numel],
            grad: None,
            requires_grad: false,
        }
    }

    pub fn scalar(v: f64) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![v],
            grad: None,
            requires_grad: false,
        }
    }

    /// Rank-1 tensor from a vector of values.
    pub fn vector(values: &[f64]) -> Self {
        Tensor {
            shape: vec![values.len()],
            data: values.to_vec(),
            grad: None,
            requires_grad: false,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn set_requires_grad(&mut self, flag: bool) {
        self.requires_grad = flag;
    }

    pub fn grad(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }

    /// Add a gradient contribution, allocating the buffer on first use.
    pub fn accumulate_grad(&mut self, g: &[f64]) {
        assert_eq!(g.len(), self.data.len(), "gradient length mismatch");
        match &mut self.grad {
            Some(buf) => {
                for (b, v) in buf.iter_mut().zip(g) {
                    *b += v;
                }
            }
            None => self.grad = Some(g.to_vec()),
        }
    }

    pub fn clear_grad(&mut self) {
        self.grad = None;
    }

    /// Element at a rank-2 position.
    pub fn at2(&self, r: usize, c: usize) -> f64 {
        debug_assert_eq!(self.rank(), 2);
        self.data[r * self.shape[1] + c]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// `make_tensor` of the engine contract: copy construction with shape and
/// finiteness validation.
pub fn make_tensor(
    shape: &[usize],
    values: &[f64],
    requires_grad: bool,
) -> Result<Tensor, TensorError> {
    Tensor::new(shape, values, requires_grad)
}
