//! A small deterministic array engine with tape-based reverse-mode
//! differentiation, sized for 1-D sequence models on the CPU.
//!
//! Tensors are immutable and row-major. Every op computes its value eagerly;
//! a recording [`Tape`] additionally keeps a backward closure so that
//! [`Tape::backward`] can produce gradients for all leaves.

mod error;
mod real;
mod tape;
mod tensor;

pub mod check;
pub mod gemm;
pub mod memory;
pub mod ops;
pub mod serialize;

pub use error::{Error, Result};
pub use real::{DType, Real};
pub use tape::{Grads, InputGrads, NodeId, Tape, Var};
pub use tensor::{numel, unravel, Buffer, Tensor};
