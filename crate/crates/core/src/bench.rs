//! Peak-memory and inference-speed sweeps over sequence length, parameter
//! counting, and log-log slope fitting.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use diffcore::memory::track;
use diffcore::{Real, Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::arch::{ArchConfig, Eegm2, Tap, Variant};
use crate::error::{Error, Result};
use crate::params::{Init, ParamStore};
use crate::repr::{stats_op, MlpHead, NUM_STATS};

pub const DEFAULT_SEQ_LENS: [usize; 8] = [50, 128, 512, 1024, 2048, 4096, 8192, 12000];
pub const DEFAULT_CAP: usize = 48 << 30;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRecord {
    pub variant: String,
    pub seq_len: usize,
    pub peak_mem_bytes: u64,
    pub samples_per_ms: f64,
    pub param_count: usize,
    pub oom: bool,
}

/// A benchmarked network: the full autoencoder, or an encoder feeding the
/// summary statistics into an MLP classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchVariant {
    pub name: String,
    pub arch: ArchConfig,
    /// hidden widths and class count of the classifier head, if any
    pub head: Option<(Vec<usize>, usize)>,
}

impl BenchVariant {
    pub fn full(channels: usize) -> Self {
        BenchVariant { name: "full".into(), arch: ArchConfig::full(channels), head: None }
    }

    /// Light encoder up to stage 3 plus a [128, 64] head over 2 classes.
    pub fn light(channels: usize) -> Self {
        BenchVariant { name: "light".into(), arch: ArchConfig::light(channels), head: Some((vec![128, 64], 2)) }
    }

    pub fn s5(channels: usize) -> Self {
        BenchVariant { name: "s5".into(), arch: ArchConfig::full(channels).with_variant(Variant::S5), head: None }
    }

    pub fn by_name(name: &str, channels: usize) -> Result<Self> {
        match name.to_ascii_lowercase().as_str() {
            "full" => Ok(Self::full(channels)),
            "light" => Ok(Self::light(channels)),
            "s5" => Ok(Self::s5(channels)),
            other => Err(Error::Config(format!("unknown bench variant `{other}` (expected full, light, s5)"))),
        }
    }

    fn head_dims(&self) -> Option<Vec<usize>> {
        self.head.as_ref().map(|(hidden, classes)| {
            let mut d = vec![self.arch.tap_width(Tap::Enc3) * NUM_STATS];
            d.extend(hidden);
            d.push(*classes);
            d
        })
    }

    /// Learnable scalars of what actually runs: the whole autoencoder, or
    /// encoder plus head.
    pub fn param_count(&self) -> usize {
        match self.head_dims() {
            None => self.arch.param_count(),
            Some(d) => self.arch.encoder_params() + d.windows(2).map(|w| w[0] * w[1] + w[1]).sum::<usize>(),
        }
    }

    pub fn build<R: Real>(&self, seed: u64) -> Result<BuiltVariant<R>> {
        let (model, params) = Eegm2::new::<R>(&self.arch, seed)?;
        let head = match self.head_dims() {
            None => None,
            Some(dims) => {
                let mut store = ParamStore::new();
                let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x4EAD);
                let h = MlpHead::new(&mut Init { store: &mut store, rng: &mut rng }, "head", &dims)?;
                Some((h, store))
            }
        };
        Ok(BuiltVariant { model, params, head })
    }
}

pub struct BuiltVariant<R> {
    pub model: Eegm2,
    pub params: ParamStore<R>,
    pub head: Option<(MlpHead, ParamStore<R>)>,
}

impl<R: Real> BuiltVariant<R> {
    /// One inference pass; returns the output element count.
    pub fn forward(&self, x: &Tensor<R>) -> Result<usize> {
        let tape = Tape::no_grad();
        let p = self.params.bind_frozen(&tape);
        let xv = tape.constant(x.clone());
        let out = match &self.head {
            None => self.model.forward(&tape, &p, &xv)?,
            Some((head, hp)) => {
                let f = self.model.tap_features(&tape, &p, &xv, Tap::Enc3)?;
                let z = stats_op(&tape, &f)?;
                let z = tape.reshape(&z, &[x.shape()[0], z.value().len() / x.shape()[0]])?;
                head.forward(&tape, &hp.bind_frozen(&tape), &z)?
            }
        };
        Ok(out.value().len())
    }
}

/// Total learnable scalars in a parameter store.
pub fn count_params<R: Real>(params: &ParamStore<R>) -> usize {
    params.count()
}

fn bench_input<R: Real>(channels: usize, seq_len: usize, seed: u64) -> Result<Tensor<R>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let v: Vec<f64> = (0..channels * seq_len).map(|_| rng.random_range(-1.0..1.0)).collect();
    Ok(Tensor::from_f64(&[1, channels, seq_len], &v)?)
}

/// High-water mark of live tensor bytes while building the variant and
/// running one batch-1 forward pass, or `None` when the cap was hit.
pub fn measure_peak_memory(variant: &BenchVariant, channels: usize, seq_len: usize, cap: usize, seed: u64) -> Result<Option<u64>> {
    let (res, stats) = track(Some(cap), || -> Result<()> {
        let built = variant.build::<f32>(seed)?;
        let x = bench_input::<f32>(channels, seq_len, seed)?;
        built.forward(&x)?;
        Ok(())
    });
    match res {
        Ok(()) => Ok(Some(stats.peak_bytes as u64)),
        Err(e) if e.is_out_of_memory() => Ok(None),
        Err(e) => Err(e),
    }
}

/// Samples per millisecond: timed runs divided by their total forward time,
/// after `warmup` untimed runs.
pub fn measure_speed<R: Real>(built: &BuiltVariant<R>, channels: usize, seq_len: usize, warmup: usize, runs: usize, seed: u64) -> Result<f64> {
    if runs == 0 {
        return Err(Error::Config("speed measurement needs at least one timed run".into()));
    }
    let x = bench_input::<R>(channels, seq_len, seed)?;
    for _ in 0..warmup {
        built.forward(&x)?;
    }
    let mut total = 0.0;
    for _ in 0..runs {
        let t0 = Instant::now();
        built.forward(&x)?;
        total += t0.elapsed().as_secs_f64() * 1e3;
    }
    Ok(runs as f64 / total.max(1e-9))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub channels: usize,
    pub seq_lens: Vec<usize>,
    pub cap_bytes: usize,
    pub warmup: usize,
    pub runs: usize,
    pub seed: u64,
    pub measure_speed: bool,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            channels: 16,
            seq_lens: DEFAULT_SEQ_LENS.to_vec(),
            cap_bytes: DEFAULT_CAP,
            warmup: 15,
            runs: 10,
            seed: 0,
            measure_speed: true,
        }
    }
}

/// Every (variant, seq_len) pair, variant-major. An over-cap length is
/// recorded as `oom` and the sweep moves on.
pub fn sweep(variants: &[BenchVariant], cfg: &SweepConfig, mut progress: impl FnMut(&BenchRecord)) -> Result<Vec<BenchRecord>> {
    let mut out = Vec::new();
    for v in variants {
        let built = if cfg.measure_speed { Some(v.build::<f32>(cfg.seed)?) } else { None };
        for &len in &cfg.seq_lens {
            let peak = measure_peak_memory(v, cfg.channels, len, cfg.cap_bytes, cfg.seed)?;
            let speed = match (&built, peak) {
                (Some(b), Some(_)) => measure_speed(b, cfg.channels, len, cfg.warmup, cfg.runs, cfg.seed)?,
                _ => 0.0,
            };
            let rec = BenchRecord {
                variant: v.name.clone(),
                seq_len: len,
                peak_mem_bytes: peak.unwrap_or(0),
                samples_per_ms: speed,
                param_count: v.param_count(),
                oom: peak.is_none(),
            };
            log::info!("{} T={len}: {:?} bytes, {speed:.4} samples/ms", v.name, peak);
            progress(&rec);
            out.push(rec);
        }
    }
    Ok(out)
}

/// Least-squares slope of ln(metric) on ln(seq_len), using the points whose
/// length lies within a factor of ten of the largest.
pub fn loglog_slope(points: &[(usize, f64)]) -> Result<f64> {
    let valid: Vec<(f64, f64)> = points
        .iter()
        .filter(|(l, m)| *l > 0 && m.is_finite() && *m > 0.0)
        .map(|&(l, m)| (l as f64, m))
        .collect();
    if valid.len() < 4 {
        return Err(Error::Invalid(format!("slope fit needs at least 4 valid points, got {}", valid.len())));
    }
    let top = valid.iter().map(|p| p.0).fold(0.0, f64::max);
    let used: Vec<(f64, f64)> = valid.into_iter().filter(|p| p.0 >= top / 10.0).map(|(l, m)| (l.ln(), m.ln())).collect();
    let n = used.len() as f64;
    let mx = used.iter().map(|p| p.0).sum::<f64>() / n;
    let my = used.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = used.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if used.len() < 2 || sxx == 0.0 {
        return Err(Error::Invalid("slope fit needs two distinct lengths in the largest decade".into()));
    }
    Ok(used.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>() / sxx)
}

/// Peak-memory slope for one variant's non-oom records.
pub fn memory_slope(records: &[BenchRecord], variant: &str) -> Result<f64> {
    let pts: Vec<(usize, f64)> = records
        .iter()
        .filter(|r| r.variant == variant && !r.oom)
        .map(|r| (r.seq_len, r.peak_mem_bytes as f64))
        .collect();
    loglog_slope(&pts)
}

pub fn write_csv<W: Write>(out: W, records: &[BenchRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in records {
        w.serialize(r).map_err(|e| Error::Invalid(format!("csv: {e}")))?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchMetadata {
    pub engine_version: String,
    pub dtype: String,
    pub cap_bytes: usize,
    pub seed: u64,
    pub batch: usize,
    pub warmup: usize,
    pub runs: usize,
    pub channels: usize,
    pub partial: bool,
}

impl BenchMetadata {
    pub fn new(cfg: &SweepConfig, partial: bool) -> Self {
        BenchMetadata {
            engine_version: env!("CARGO_PKG_VERSION").into(),
            dtype: "real32".into(),
            cap_bytes: cfg.cap_bytes,
            seed: cfg.seed,
            batch: 1,
            warmup: cfg.warmup,
            runs: cfg.runs,
            channels: cfg.channels,
            partial,
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = toml::to_string(self).map_err(|e| Error::Invalid(format!("metadata: {e}")))?;
        std::fs::write(path, text).map_err(|e| Error::file(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_power_laws() {
        let lens = [50, 128, 512, 1024, 2048, 4096, 8192, 12000];
        for k in [1.0, 2.0] {
            let pts: Vec<_> = lens.iter().map(|&l| (l, 3.0 * (l as f64).powf(k))).collect();
            assert!((loglog_slope(&pts).unwrap() - k).abs() < 1e-6);
        }
        assert!(loglog_slope(&[(1, 1.0), (2, 2.0), (4, 4.0)]).is_err());
    }

    #[test]
    fn linear_layer_count() {
        let mut store = ParamStore::<f32>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        crate::params::Linear::new(&mut Init { store: &mut store, rng: &mut rng }, "l", 3, 2, true).unwrap();
        assert_eq!(count_params(&store), 8);
    }
}
