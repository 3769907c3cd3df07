//! Synthetic two-class task: pink-noise background for both classes, plus a
//! subject-specific 8-12 Hz oscillation for class 1. Subjects differ in
//! gain, noise level, oscillation frequency, amplitude and phase.

use std::f64::consts::PI;

use diffcore::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::data::manifest::{Manifest, RecordMeta};
use crate::error::{config_err, Result};

pub const ALPHA_BAND: (f64, f64) = (8.0, 12.0);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub n_subjects: usize,
    /// split evenly between the two classes
    pub windows_per_subject: usize,
    pub channels: usize,
    pub window_len: usize,
    pub sampling_rate_hz: f64,
    pub seed: u64,
    /// oscillation amplitude relative to the unit-variance background
    pub amplitude: f64,
    /// background noise is band-limited to (0, noise_cutoff_hz]
    pub noise_cutoff_hz: f64,
    /// per-subject overall gain, drawn uniformly from this range
    pub gain_range: (f64, f64),
    /// per-subject background level, drawn uniformly from this range
    pub noise_range: (f64, f64),
    /// per-subject fraction of `amplitude`, drawn uniformly from this range
    pub oscillation_range: (f64, f64),
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_subjects: 20,
            windows_per_subject: 20,
            channels: 14,
            window_len: 256,
            sampling_rate_hz: 128.0,
            seed: 0,
            amplitude: 2.0,
            noise_cutoff_hz: 30.0,
            gain_range: (0.9, 1.1),
            noise_range: (0.9, 1.1),
            oscillation_range: (0.5, 1.0),
        }
    }
}

impl SynthConfig {
    /// Long-sequence geometry: 16 channels, 256 Hz.
    pub fn long(window_len: usize) -> Self {
        SynthConfig { channels: 16, window_len, sampling_rate_hz: 256.0, ..Self::default() }
    }

    pub fn highest_frequency(&self) -> f64 {
        self.noise_cutoff_hz.max(ALPHA_BAND.1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_subjects == 0 || self.channels == 0 || self.window_len == 0 {
            return config_err("n_subjects, channels and window_len must be positive");
        }
        if self.windows_per_subject < 2 || self.windows_per_subject % 2 != 0 {
            return config_err(format!("windows_per_subject must be even and >= 2, got {}", self.windows_per_subject));
        }
        if !(self.amplitude.is_finite() && self.amplitude >= 0.0) {
            return config_err(format!("amplitude must be finite and >= 0, got {}", self.amplitude));
        }
        for (name, (lo, hi)) in [
            ("gain_range", self.gain_range),
            ("noise_range", self.noise_range),
            ("oscillation_range", self.oscillation_range),
        ] {
            if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
                return config_err(format!("{name} must satisfy 0 < low <= high, got ({lo}, {hi})"));
            }
        }
        if !(self.noise_cutoff_hz.is_finite() && self.noise_cutoff_hz > 0.0) {
            return config_err("noise_cutoff_hz must be positive");
        }
        let fs = self.sampling_rate_hz;
        if !(fs.is_finite() && fs > 2.0 * self.highest_frequency()) {
            return config_err(format!(
                "sampling rate {fs} Hz must exceed twice the highest generated frequency ({} Hz)",
                self.highest_frequency()
            ));
        }
        Ok(())
    }
}

pub struct SynthDataset {
    pub manifest: Manifest,
    pub payloads: Vec<Tensor<f32>>,
}

/// Unit-variance noise with 1/f power over (0, cutoff], zero elsewhere.
fn pink_noise(rng: &mut ChaCha8Rng, planner: &mut FftPlanner<f64>, n: usize, fs: f64, cutoff: f64) -> Vec<f64> {
    let mut buf: Vec<Complex<f64>> = (0..n).map(|_| Complex::new(rng.sample(StandardNormal), 0.0)).collect();
    planner.plan_fft_forward(n).process(&mut buf);
    for (k, v) in buf.iter_mut().enumerate() {
        let f = k.min(n - k) as f64 * fs / n as f64;
        *v *= if f > 0.0 && f <= cutoff { 1.0 / f.max(1.0).sqrt() } else { 0.0 };
    }
    planner.plan_fft_inverse(n).process(&mut buf);
    let mut out: Vec<f64> = buf.iter().map(|c| c.re).collect();
    let mean = out.iter().sum::<f64>() / n as f64;
    let std = (out.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
    let scale = if std > 0.0 { 1.0 / std } else { 0.0 };
    out.iter_mut().for_each(|v| *v = (*v - mean) * scale);
    out
}

/// Generates the dataset in memory: per subject, one record per class of
/// `windows_per_subject / 2` windows each. Deterministic in `cfg.seed`.
pub fn synth_generate(cfg: &SynthConfig) -> Result<SynthDataset> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut planner = FftPlanner::new();
    let fs = cfg.sampling_rate_hz;
    let n = cfg.windows_per_subject / 2 * cfg.window_len;
    let mut manifest = Manifest::new("synthetic-alpha", fs, cfg.channels);
    let mut payloads = Vec::new();
    for s in 0..cfg.n_subjects {
        let gain = rng.random_range(cfg.gain_range.0..=cfg.gain_range.1);
        let noise = rng.random_range(cfg.noise_range.0..=cfg.noise_range.1);
        let freq = rng.random_range(ALPHA_BAND.0..ALPHA_BAND.1);
        let amp = cfg.amplitude * rng.random_range(cfg.oscillation_range.0..=cfg.oscillation_range.1);
        let spatial: Vec<f64> = (0..cfg.channels).map(|_| rng.random_range(0.5..1.0)).collect();
        let phase: Vec<f64> = (0..cfg.channels).map(|_| rng.random_range(0.0..2.0 * PI)).collect();
        for label in 0..2usize {
            let mut values = Vec::with_capacity(cfg.channels * n);
            for ch in 0..cfg.channels {
                let bg = pink_noise(&mut rng, &mut planner, n, fs, cfg.noise_cutoff_hz);
                for (t, b) in bg.into_iter().enumerate() {
                    let osc = if label == 1 { amp * spatial[ch] * (2.0 * PI * freq * t as f64 / fs + phase[ch]).sin() } else { 0.0 };
                    values.push((gain * (noise * b + osc)) as f32);
                }
            }
            manifest.records.push(RecordMeta {
                file: format!("s{s:03}_c{label}.bin"),
                subject_id: format!("s{s:03}"),
                label: Some(label),
                n_samples: n,
                channels: None,
                sampling_rate_hz: None,
            });
            payloads.push(Tensor::new(&[cfg.channels, n], values)?);
        }
    }
    Ok(SynthDataset { manifest, payloads })
}

impl SynthDataset {
    pub fn records(&self) -> Vec<crate::data::Record> {
        self.manifest
            .records
            .iter()
            .zip(&self.payloads)
            .map(|(meta, data)| crate::data::Record { meta: meta.clone(), data: data.clone() })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nyquist_is_enforced() {
        let cfg = SynthConfig { sampling_rate_hz: 50.0, ..SynthConfig::default() };
        assert!(synth_generate(&cfg).is_err());
    }

    #[test]
    fn background_has_unit_variance() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = pink_noise(&mut rng, &mut FftPlanner::new(), 512, 128.0, 30.0);
        let var = x.iter().map(|v| v * v).sum::<f64>() / 512.0;
        assert!((var - 1.0).abs() < 1e-9);
    }
}
