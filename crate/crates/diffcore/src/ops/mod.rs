//! Differentiable operations. Each `pub fn` here computes a plain forward
//! value; the matching `Tape` method records it for reverse mode.

mod conv;
mod elementwise;
mod interp;
mod layout;
mod linear;
mod norm;
mod pool;
mod softmax;
mod spectral;

pub use conv::conv1d;
pub use interp::interp_upsample;
pub use layout::{concat, narrow, pad_last, transpose_last_two};
pub use linear::linear;
pub use norm::layernorm;
pub use pool::max_pool1d;
pub use softmax::log_softmax;
pub use spectral::{rfft_mag, RfftMag};

use crate::error::{shape_err, Result};

pub(crate) fn expect_rank(op: &'static str, shape: &[usize], rank: usize) -> Result<()> {
    if shape.len() != rank {
        return shape_err(op, format!("expected rank {rank}, got shape {shape:?}"));
    }
    Ok(())
}

/// Splits a shape into (leading element count, trailing dim).
pub(crate) fn split_last(op: &'static str, shape: &[usize]) -> Result<(usize, usize)> {
    match shape.split_last() {
        Some((&d, lead)) => Ok((lead.iter().product(), d)),
        None => shape_err(op, "expected at least one dimension"),
    }
}
