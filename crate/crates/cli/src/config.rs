//! Per-command run configurations. Files are TOML; unknown keys are errors.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use eegm2::arch::{ArchConfig, Variant};
use eegm2::bench::SweepConfig;
use eegm2::experiment::{ProbeMode, ProbeSettings};
use eegm2::train::PretrainConfig;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Full,
    Light,
    Desk,
    Tiny,
}

impl Preset {
    pub fn arch(self, channels: usize) -> ArchConfig {
        match self {
            Preset::Full => ArchConfig::full(channels),
            Preset::Light => ArchConfig::light(channels),
            Preset::Desk => ArchConfig::desk(channels),
            Preset::Tiny => ArchConfig::tiny(channels),
        }
    }
}

/// Dataset location, windowing and subject split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSettings {
    pub manifest: Option<PathBuf>,
    pub window_len: usize,
    /// defaults to window_len (no overlap)
    pub stride: Option<usize>,
    pub split: [f64; 3],
    pub split_seed: u64,
}

impl Default for DataSettings {
    fn default() -> Self {
        DataSettings { manifest: None, window_len: 256, stride: None, split: [0.8, 0.1, 0.1], split_seed: 0 }
    }
}

impl DataSettings {
    pub fn manifest(&self) -> Result<&Path> {
        match &self.manifest {
            Some(p) => Ok(p),
            None => bail!("no dataset given (set data.manifest or pass --data)"),
        }
    }

    pub fn stride(&self) -> usize {
        self.stride.unwrap_or(self.window_len)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PretrainRun {
    pub data: DataSettings,
    pub preset: Preset,
    /// replaces the preset when given
    pub arch: Option<ArchConfig>,
    pub variant: Variant,
    pub train: PretrainConfig,
}

impl Default for PretrainRun {
    fn default() -> Self {
        PretrainRun {
            data: DataSettings::default(),
            preset: Preset::Desk,
            arch: None,
            variant: Variant::Full,
            train: PretrainConfig::desk(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalRun {
    pub data: DataSettings,
    pub checkpoint: Option<PathBuf>,
    pub mode: ProbeMode,
    /// architecture for `scratch` mode
    pub preset: Preset,
    pub seeds: Vec<u64>,
    pub probe: ProbeSettings,
    /// also write the test representations as CSV
    pub export: bool,
}

impl Default for EvalRun {
    fn default() -> Self {
        EvalRun {
            data: DataSettings::default(),
            checkpoint: None,
            mode: ProbeMode::Light,
            preset: Preset::Desk,
            seeds: vec![0, 1, 2],
            probe: ProbeSettings::default(),
            export: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchRun {
    pub variants: Vec<String>,
    pub sweep: SweepConfig,
}

impl Default for BenchRun {
    fn default() -> Self {
        BenchRun { variants: vec!["full".into(), "light".into(), "s5".into()], sweep: SweepConfig::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblateRun {
    pub data: DataSettings,
    pub preset: Preset,
    pub variants: Vec<Variant>,
    pub seeds: Vec<u64>,
    pub train: PretrainConfig,
    pub probe: ProbeSettings,
}

impl Default for AblateRun {
    fn default() -> Self {
        AblateRun {
            data: DataSettings::default(),
            preset: Preset::Desk,
            variants: vec![Variant::Full, Variant::S1, Variant::S2],
            seeds: vec![0, 1, 2],
            train: PretrainConfig::desk(),
            probe: ProbeSettings::default(),
        }
    }
}

/// Parses `path`, or returns the defaults when no file is given.
pub fn load<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    let Some(path) = path else {
        return Ok(T::default());
    };
    let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
}

pub fn to_toml<T: Serialize>(cfg: &T) -> Result<String> {
    toml::to_string(cfg).context("serializing resolved config")
}
