use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{config_err, Error, Result};
use crate::ssd::{AMode, SsdConfig};

/// Ablation selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Full,
    /// single-kernel embedding
    S1,
    /// L1-only reconstruction loss
    S2,
    /// per-channel decay
    S3,
    /// per-channel decay and single-kernel embedding
    S4,
    /// attention blocks in place of state-space blocks
    S5,
}

impl Variant {
    pub const ALL: [Variant; 6] = [Variant::Full, Variant::S1, Variant::S2, Variant::S3, Variant::S4, Variant::S5];

    pub fn multiscale(self) -> bool {
        !matches!(self, Variant::S1 | Variant::S4)
    }

    pub fn a_mode(self) -> AMode {
        match self {
            Variant::S3 | Variant::S4 => AMode::DiagonalPerChannel,
            _ => AMode::ScalarPerHead,
        }
    }

    pub fn uses_attention(self) -> bool {
        self == Variant::S5
    }

    /// Whether the spectral term is part of the reconstruction objective.
    pub fn spectral_loss(self) -> bool {
        self != Variant::S2
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::S1 => "s1",
            Variant::S2 => "s2",
            Variant::S3 => "s3",
            Variant::S4 => "s4",
            Variant::S5 => "s5",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown variant `{s}` (expected one of full, s1, s2, s3, s4, s5)")))
    }
}

/// Encoder tap points for representation extraction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tap {
    Enc1,
    Enc2,
    Enc3,
}

impl Tap {
    pub const ALL: [Tap; 3] = [Tap::Enc1, Tap::Enc2, Tap::Enc3];

    pub fn name(self) -> &'static str {
        match self {
            Tap::Enc1 => "enc1",
            Tap::Enc2 => "enc2",
            Tap::Enc3 => "enc3",
        }
    }

    pub fn stage(self) -> usize {
        match self {
            Tap::Enc1 => 0,
            Tap::Enc2 => 1,
            Tap::Enc3 => 2,
        }
    }
}

impl FromStr for Tap {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Tap::ALL
            .into_iter()
            .find(|t| t.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown tap `{s}`; valid taps are enc1, enc2, enc3")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchConfig {
    pub in_channels: usize,
    pub stage_widths: [usize; 3],
    pub pool: usize,
    pub d_state: usize,
    pub n_heads: usize,
    pub variant: Variant,
    #[serde(default = "default_chunk")]
    pub chunk: usize,
    #[serde(default = "default_dt_min")]
    pub dt_min: f64,
    #[serde(default = "default_dt_max")]
    pub dt_max: f64,
}

fn default_chunk() -> usize {
    64
}
fn default_dt_min() -> f64 {
    1e-3
}
fn default_dt_max() -> f64 {
    1e-1
}

impl ArchConfig {
    fn preset(in_channels: usize, stage_widths: [usize; 3], d_state: usize, n_heads: usize) -> Self {
        ArchConfig {
            in_channels,
            stage_widths,
            pool: 2,
            d_state,
            n_heads,
            variant: Variant::Full,
            chunk: default_chunk(),
            dt_min: default_dt_min(),
            dt_max: default_dt_max(),
        }
    }

    /// Large preset sized to roughly 4.5M parameters at 16 input channels.
    pub fn full(in_channels: usize) -> Self {
        Self::preset(in_channels, [152, 304, 608], 64, 8)
    }

    /// Compact preset whose encoder plus probe head is roughly 0.25M parameters.
    pub fn light(in_channels: usize) -> Self {
        Self::preset(in_channels, [40, 80, 160], 16, 4)
    }

    /// Small preset for CPU-scale pretraining runs.
    pub fn desk(in_channels: usize) -> Self {
        Self::preset(in_channels, [16, 32, 64], 16, 4)
    }

    /// Smallest configuration, used for finite-difference checks.
    pub fn tiny(in_channels: usize) -> Self {
        let mut c = Self::preset(in_channels, [6, 12, 24], 4, 2);
        c.chunk = 8;
        c
    }

    pub fn with_variant(mut self, variant: Variant) -> Self {
        self.variant = variant;
        self
    }

    pub fn multiscale(&self) -> bool {
        self.variant.multiscale()
    }

    /// Time-length multiple the encoder needs (pool squared).
    pub fn length_multiple(&self) -> usize {
        self.pool * self.pool
    }

    pub fn ssd(&self, width: usize) -> SsdConfig {
        SsdConfig {
            d_model: width,
            d_state: self.d_state,
            n_heads: self.n_heads,
            a_mode: self.variant.a_mode(),
            dt_min: self.dt_min,
            dt_max: self.dt_max,
            chunk: self.chunk,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let [d1, d2, d3] = self.stage_widths;
        if self.in_channels == 0 {
            return config_err("in_channels must be at least 1");
        }
        if !(d1 < d2 && d2 < d3) {
            return config_err(format!("stage widths must increase strictly, got {:?}", self.stage_widths));
        }
        if self.multiscale() && d1 < 3 {
            return config_err(format!("multiscale embedding needs d1 >= 3, got {d1}"));
        }
        if self.pool < 2 {
            return config_err(format!("pool must be at least 2, got {}", self.pool));
        }
        for w in self.stage_widths {
            self.ssd(w).validate()?;
        }
        Ok(())
    }

    /// Branch widths of the multiscale embedding for kernels 1, 3, 7.
    pub fn embed_split(&self) -> [usize; 3] {
        let d1 = self.stage_widths[0];
        let base = d1 / 3;
        [d1 - 2 * base, base, base]
    }

    fn ssd_block_params(&self, d: usize) -> usize {
        let g = match self.variant.a_mode() {
            AMode::ScalarPerHead => self.n_heads,
            AMode::DiagonalPerChannel => d,
        };
        2 * d + 2 * (d * d + d) + 2 * d * self.d_state + (g * d + g) + g
    }

    fn attention_block_params(&self, d: usize) -> usize {
        4 * d + (3 * d * d + 3 * d) + (d * d + d) + 2 * (d * d + d)
    }

    fn mixer_params(&self, d: usize) -> usize {
        if self.variant.uses_attention() {
            self.attention_block_params(d)
        } else {
            self.ssd_block_params(d)
        }
    }

    pub fn embed_params(&self) -> usize {
        let (c, d1) = (self.in_channels, self.stage_widths[0]);
        if self.multiscale() {
            self.embed_split()
                .iter()
                .zip([1, 3, 7])
                .map(|(&w, k)| w * c * k + w)
                .sum()
        } else {
            d1 * c + d1
        }
    }

    /// Embedding plus the three encoder stages.
    pub fn encoder_params(&self) -> usize {
        let [d1, d2, d3] = self.stage_widths;
        self.embed_params() + (d1 * d1 + d1) + self.mixer_params(d1) + (3 * d1 * d2 + d2) + (3 * d2 * d3 + d3)
    }

    /// Analytic parameter count of the full encoder–mediator–decoder.
    pub fn param_count(&self) -> usize {
        let [d1, d2, d3] = self.stage_widths;
        let mediator = 2 * (d3 * d3 + d3) + self.mixer_params(d3);
        let decoder = self.mixer_params(d3)
            + (3 * (d3 + d2) * d2 + d2)
            + self.mixer_params(d2)
            + (3 * (d2 + d1) * d1 + d1)
            + (d1 * self.in_channels + self.in_channels);
        self.encoder_params() + mediator + decoder
    }

    /// Channels of the feature map at a tap.
    pub fn tap_width(&self, tap: Tap) -> usize {
        self.stage_widths[tap.stage()]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn variant_round_trip() {
        for v in Variant::ALL {
            assert_eq!(v.name().parse::<Variant>().unwrap(), v);
            assert_eq!(v.name().to_uppercase().parse::<Variant>().unwrap(), v);
        }
        assert!("s9".parse::<Variant>().is_err());
    }

    #[test]
    fn unknown_tap_lists_valid_names() {
        let msg = "dec1".parse::<Tap>().unwrap_err().to_string();
        assert!(msg.contains("enc1, enc2, enc3"));
    }

    #[test]
    fn embed_split_assigns_remainder_to_pointwise_branch() {
        let mut c = ArchConfig::light(16);
        assert_eq!(c.embed_split(), [14, 13, 13]);
        c.stage_widths = [3, 4, 5];
        assert_eq!(c.embed_split(), [1, 1, 1]);
    }

    #[test]
    fn validation_rules() {
        assert!(ArchConfig::tiny(2).validate().is_ok());
        let mut c = ArchConfig::tiny(2);
        c.stage_widths = [6, 6, 24];
        assert!(c.validate().is_err());
        let mut c = ArchConfig::tiny(2);
        c.pool = 1;
        assert!(c.validate().is_err());
        let mut c = ArchConfig::tiny(2);
        c.stage_widths = [2, 4, 8];
        assert!(c.validate().is_err());
        c.variant = Variant::S1;
        assert!(c.validate().is_ok());
    }
}
