use std::io::Write;
use std::path::Path;
use std::time::Instant;

use diffcore::{Real, Tape, Tensor};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::arch::checkpoint::Moments;
use crate::arch::Eegm2;
use crate::data::SignalBatch;
use crate::error::{Error, Result};
use crate::loss::{acmse, reconstruction_loss, LossConfig};
use crate::params::ParamStore;
use crate::train::optim::{AdamW, OptimConfig};
use crate::train::rows;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PretrainConfig {
    pub optim: OptimConfig,
    pub loss: LossConfig,
    pub epochs: usize,
    pub batch_size: usize,
    /// fraction of records held out for validation
    pub val_frac: f64,
    pub seed: u64,
    /// abort once an epoch's loss exceeds this multiple of the initial loss
    pub divergence_factor: f64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            optim: OptimConfig::default(),
            loss: LossConfig::default(),
            epochs: 50,
            batch_size: 64,
            val_frac: 0.1,
            seed: 0,
            divergence_factor: 1e3,
        }
    }
}

impl PretrainConfig {
    /// Settings for the small desk preset on a few hundred windows: smaller
    /// batches and a 10x higher peak rate, since the default schedule barely
    /// moves such a model in 50 epochs.
    pub fn desk() -> Self {
        let mut cfg = PretrainConfig { batch_size: 16, ..Self::default() };
        cfg.optim.max_lr = 5e-3;
        cfg
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    pub acmse: Option<f64>,
    pub seconds: f64,
}

/// Optimizer position carried across runs.
#[derive(Clone)]
pub struct TrainState<R> {
    pub step: u64,
    pub epoch: usize,
    pub moments: Option<Moments<R>>,
}

impl<R> Default for TrainState<R> {
    fn default() -> Self {
        TrainState { step: 0, epoch: 0, moments: None }
    }
}

pub struct PretrainOutcome<R> {
    pub epochs: Vec<EpochMetrics>,
    /// mean loss over the training split before the first update
    pub initial_loss: f64,
    /// validation ACMSE of predicting each channel's training mean
    pub baseline_acmse: Option<f64>,
    pub state: TrainState<R>,
    pub train_records: Vec<usize>,
    pub val_records: Vec<usize>,
}

fn shuffle_rng(seed: u64, epoch: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ (epoch as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// Record-level validation hold-out: `round(val_frac · records)`, at least
/// one when there are two or more records, none otherwise.
fn split_records(data: &SignalBatch, val_frac: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut recs = data.records.clone();
    recs.sort_unstable();
    recs.dedup();
    if recs.len() < 2 || val_frac <= 0.0 {
        return (recs, Vec::new());
    }
    recs.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_val = ((val_frac * recs.len() as f64).round() as usize).clamp(1, recs.len() - 1);
    let mut val = recs.split_off(recs.len() - n_val);
    recs.sort_unstable();
    val.sort_unstable();
    (recs, val)
}

/// Loss and ACMSE over `x` in batches without touching parameters.
pub fn evaluate<R: Real>(model: &Eegm2, params: &ParamStore<R>, x: &Tensor<R>, cfg: &PretrainConfig) -> Result<(f64, f64)> {
    let n = x.shape()[0];
    let (mut loss, mut err) = (0.0, 0.0);
    let idx: Vec<usize> = (0..n).collect();
    for chunk in idx.chunks(cfg.batch_size) {
        let tape = Tape::no_grad();
        let p = params.bind_frozen(&tape);
        let xb = tape.constant(rows(x, chunk)?);
        let xhat = model.forward(&tape, &p, &xb)?;
        let l = reconstruction_loss(&tape, &xb, &xhat, &cfg.loss)?;
        loss += l.value().item()?.as_f64() * chunk.len() as f64;
        err += acmse(xb.value(), xhat.value())? * chunk.len() as f64;
    }
    Ok((loss / n as f64, err / n as f64))
}

/// ACMSE on `val` of the constant predictor that outputs each channel's
/// mean over `train`.
pub fn mean_predictor_acmse(train: &Tensor<f32>, val: &Tensor<f32>) -> Result<f64> {
    let (c, t) = (train.shape()[1], train.shape()[2]);
    let mut means = vec![0.0f64; c];
    for (i, v) in train.data().iter().enumerate() {
        means[(i / t) % c] += f64::from(*v);
    }
    let count = (train.shape()[0] * t) as f64;
    means.iter_mut().for_each(|m| *m /= count);
    let pred: Vec<f32> = (0..val.len()).map(|i| means[(i / t) % c] as f32).collect();
    acmse(val, &Tensor::new(val.shape(), pred)?)
}

/// Minimizes the reconstruction loss over `data`, holding out a fraction of
/// records for validation. Resumes from `state` when given; the schedule
/// then spans the previous and the new epochs.
pub fn pretrain<R: Real>(
    model: &Eegm2,
    params: &mut ParamStore<R>,
    data: &SignalBatch,
    cfg: &PretrainConfig,
    state: TrainState<R>,
    mut on_epoch: impl FnMut(&EpochMetrics, &ParamStore<R>, &TrainState<R>) -> Result<()>,
) -> Result<PretrainOutcome<R>> {
    cfg.loss.validate()?;
    if cfg.batch_size == 0 || !(cfg.divergence_factor > 1.0) || !(0.0..1.0).contains(&cfg.val_frac) {
        return Err(Error::Config("batch_size must be positive, divergence_factor > 1, val_frac in [0, 1)".into()));
    }
    if data.channels() != model.cfg.in_channels {
        return Err(Error::Invalid(format!(
            "data has {} channels, model expects {}",
            data.channels(),
            model.cfg.in_channels
        )));
    }
    let (train_records, val_records) = split_records(data, cfg.val_frac, cfg.seed);
    let train = data.from_records(&train_records)?;
    let val = data.from_records(&val_records)?;
    if train.is_empty() {
        return Err(Error::Invalid("no training windows".into()));
    }
    let baseline_acmse = if val.is_empty() { None } else { Some(mean_predictor_acmse(&train.x, &val.x)?) };
    let train_x: Tensor<R> = train.x_as()?;
    let val_x: Tensor<R> = val.x_as()?;

    let mut opt = match state.moments {
        Some(m) => AdamW::resume(cfg.optim.clone(), params, state.step, m)?,
        None => {
            let mut o = AdamW::new(cfg.optim.clone(), params)?;
            o.step = state.step;
            o
        }
    };
    let batches = train.len().div_ceil(cfg.batch_size);
    let total_steps = (state.epoch + cfg.epochs) * batches;
    let mut step = state.step as usize;
    let (initial_loss, _) = evaluate(model, params, &train_x, cfg)?;
    let limit = cfg.divergence_factor * initial_loss;
    let mut history = Vec::new();
    let mut epoch = state.epoch;

    for _ in 0..cfg.epochs {
        let started = Instant::now();
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut shuffle_rng(cfg.seed, epoch));
        let mut sum = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let tape = Tape::new();
            let p = params.bind(&tape);
            let xb = tape.constant(rows(&train_x, chunk)?);
            let xhat = model.forward(&tape, &p, &xb)?;
            let loss = reconstruction_loss(&tape, &xb, &xhat, &cfg.loss)?;
            let value = loss.value().item()?.as_f64();
            if !value.is_finite() {
                return Err(Error::Diverged { epoch: epoch + 1, loss: value, limit });
            }
            sum += value * chunk.len() as f64;
            let grads = tape.backward(&loss)?;
            let g = p.vars().iter().map(|v| grads.get_or_zeros(v)).collect::<diffcore::Result<Vec<_>>>()?;
            drop(grads);
            let lr = cfg.optim.lr(step.min(total_steps - 1), total_steps)?;
            opt.update(params, &g, lr)?;
            step += 1;
        }
        epoch += 1;
        let train_loss = sum / train.len() as f64;
        if !(train_loss <= limit) {
            return Err(Error::Diverged { epoch, loss: train_loss, limit });
        }
        let (val_loss, val_acmse) = if val.is_empty() {
            (None, None)
        } else {
            let (l, a) = evaluate(model, params, &val_x, cfg)?;
            (Some(l), Some(a))
        };
        let m = EpochMetrics { epoch, train_loss, val_loss, acmse: val_acmse, seconds: started.elapsed().as_secs_f64() };
        log::info!("epoch {epoch}: train {train_loss:.6} val {val_loss:?} acmse {val_acmse:?} ({:.2}s)", m.seconds);
        let snapshot = TrainState { step: step as u64, epoch, moments: None };
        on_epoch(&m, params, &snapshot)?;
        history.push(m);
    }
    Ok(PretrainOutcome {
        epochs: history,
        initial_loss,
        baseline_acmse,
        state: TrainState { step: step as u64, epoch, moments: Some(opt.moments()) },
        train_records,
        val_records,
    })
}

/// One JSON object per line.
pub fn write_metrics_jsonl(path: &Path, metrics: &[EpochMetrics]) -> Result<()> {
    let mut out = Vec::new();
    for m in metrics {
        serde_json::to_writer(&mut out, m).map_err(|e| Error::Invalid(format!("metrics: {e}")))?;
        out.write_all(b"\n")?;
    }
    std::fs::write(path, out).map_err(|e| Error::file(path, e))
}
