//! Non-intrusive load monitoring toolkit.
//!
//! Disaggregates a household's aggregate power signal into per-appliance
//! consumption sequences. The crate ships its own reverse-mode tensor engine,
//! the recurrent and convolutional sequence models built on it, a data
//! pipeline for multi-channel power time series, drift-triggered model
//! adaptation, Gaussian-process hyperparameter tuning, and an evaluation
//! suite. Everything is deterministic under explicit seeds and verifiable at
//! desk scale on synthetic data.
//!
//! Data-parallel inner loops (batch gradients, window sweeps, candidate
//! scoring) run on rayon when the default `parallel` feature is enabled and
//! fall back to sequential execution otherwise; both paths produce
//! bit-identical results.

pub mod cells;
pub mod data;
pub mod drift;
pub mod exec;
pub mod metrics;
pub mod model;
pub mod tensor;
pub mod tune;

mod linalg;

pub use tensor::{Tensor, TensorError};
