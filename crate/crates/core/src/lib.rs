//! Shift-based convolutional networks with learnable, sparsity-regularized displacements.

#![allow(clippy::needless_range_loop)]

pub mod arch;
pub mod bench;
pub mod data;
pub mod error;
pub mod graph;
pub mod nn;
pub mod shift;
pub mod tensor;
pub mod train;

#[cfg(test)]
mod testing;

pub use error::{Error, Result};
pub use tensor::{Shape, Tensor};
