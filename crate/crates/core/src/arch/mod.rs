//! Network assembly: presets, ablation variants, the model and checkpoints.

mod check;
pub mod checkpoint;
mod config;
mod model;

pub use check::check_model_gradients;
pub use config::{ArchConfig, Tap, Variant};
pub use model::{Eegm2, Encoded, Mixer};

use diffcore::Real;

use crate::error::Result;
use crate::params::ParamStore;

/// Builds a model for `cfg` and logs its size.
pub fn build_variant<R: Real>(cfg: &ArchConfig, seed: u64) -> Result<(Eegm2, ParamStore<R>)> {
    let (model, params) = Eegm2::new(cfg, seed)?;
    log::info!(
        "built variant {} with {} parameters (widths {:?}, d_state {}, heads {})",
        cfg.variant,
        params.count(),
        cfg.stage_widths,
        cfg.d_state,
        cfg.n_heads
    );
    Ok((model, params))
}
