//! Reverse-mode automatic differentiation over dense CPU tensors.
//!
//! The tape is rebuilt for every step: each [`Graph`] method evaluates its
//! operation immediately, and [`Graph::backward`] accumulates gradients for
//! all nodes that depend on a gradient-requiring leaf. Everything runs on
//! the calling thread in a fixed order, so results are bit-reproducible.

mod float;
mod graph;
pub mod ops;
pub mod optim;
mod tensor;
pub mod testing;

pub use float::{gemm, Float};
pub use graph::{Graph, Target, Var};
pub use ops::{rotate90_nchw, spectral_sigma};
pub use tensor::Tensor;

pub use crate::ops::BatchStats;
