//! Reverse-mode automatic differentiation over dense rank-4 (`N×C×H×W`)
//! tensors.
//!
//! The engine is deliberately small: a [`Graph`] records every operation as
//! it runs, and [`Graph::backward`] walks the tape in reverse to produce
//! [`Gradients`]. Everything is generic over [`Real`] so the same model code
//! can train in `f32` and be gradient-checked in `f64`.

mod alloc;
pub mod check;
mod error;
mod graph;
mod kernels;
pub mod optim;
mod real;
mod tensor;

pub use alloc::retain_freed_memory;
pub use error::{Result, TensorError};
pub use graph::{Gradients, Graph, Var};
pub use real::Real;
pub use tensor::{Shape, Tensor};
