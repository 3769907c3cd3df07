//! U-shaped state-space autoencoder for long multichannel signals, trained by
//! temporal plus spectral reconstruction, with probing, fine-tuning and
//! memory/speed benchmarking.

pub mod arch;
pub mod bench;
pub mod data;
mod error;
pub mod experiment;
pub mod loss;
pub mod params;
pub mod repr;
pub mod ssd;
pub mod train;

pub use error::{Error, Result};
