//! Input-dependent state-space block and its attention counterpart.

mod attention;
mod block;
pub mod scan;

pub use attention::{attention, AttentionBlock};
pub use block::{decay_factor, Discretized, SsdBlock};
pub use scan::{scan, scan_chunked, scan_naive};

use serde::{Deserialize, Serialize};

use crate::error::{config_err, Result};

/// How decay factors are shared across channels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AMode {
    /// One scalar decay per head, B/C shared by the head's channels.
    ScalarPerHead,
    /// One decay per channel.
    DiagonalPerChannel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SsdConfig {
    pub d_model: usize,
    pub d_state: usize,
    pub n_heads: usize,
    pub a_mode: AMode,
    pub dt_min: f64,
    pub dt_max: f64,
    pub chunk: usize,
}

impl SsdConfig {
    pub fn new(d_model: usize, d_state: usize, n_heads: usize) -> Self {
        SsdConfig {
            d_model,
            d_state,
            n_heads,
            a_mode: AMode::ScalarPerHead,
            dt_min: 1e-3,
            dt_max: 1e-1,
            chunk: 64,
        }
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    /// Number of independent decay factors per time step.
    pub fn decay_groups(&self) -> usize {
        match self.a_mode {
            AMode::ScalarPerHead => self.n_heads,
            AMode::DiagonalPerChannel => self.d_model,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_heads == 0 || self.d_model == 0 || self.d_model % self.n_heads != 0 {
            return config_err(format!(
                "d_model {} must be a positive multiple of n_heads {}",
                self.d_model, self.n_heads
            ));
        }
        if self.d_state == 0 {
            return config_err("d_state must be at least 1");
        }
        if !(self.dt_min > 0.0 && self.dt_min < self.dt_max && self.dt_max.is_finite()) {
            return config_err(format!(
                "need 0 < dt_min < dt_max, got {} and {}",
                self.dt_min, self.dt_max
            ));
        }
        if self.chunk == 0 {
            return config_err("chunk must be at least 1");
        }
        Ok(())
    }
}
