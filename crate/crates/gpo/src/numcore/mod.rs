//! Dense tensors, reverse-mode differentiation and Adam.
//!
//! Kernels reduce in a fixed left-to-right order so identical inputs give
//! bit-identical outputs regardless of thread count.

mod adam;
pub mod kernels;
mod mask;
mod scalar;
mod tape;
mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use mask::BoolMatrix;
pub use scalar::Scalar;
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
