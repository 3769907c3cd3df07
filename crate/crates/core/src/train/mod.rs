//! Optimizer, learning-rate schedule, self-supervised pretraining and
//! supervised fine-tuning.

mod finetune;
mod optim;
mod pretrain;

pub use finetune::{finetune, FinetuneConfig, FinetuneOutcome};
pub use optim::{onecycle_lr, AdamW, OptimConfig, Schedule, StepOutcome};
pub use pretrain::{
    evaluate, mean_predictor_acmse, pretrain, write_metrics_jsonl, EpochMetrics, PretrainConfig, PretrainOutcome, TrainState,
};

use diffcore::{Real, Tensor};

use crate::error::Result;

/// Rows `[start, start+len)` of a `[N, ...]` tensor.
pub(crate) fn rows<R: Real>(x: &Tensor<R>, idx: &[usize]) -> Result<Tensor<R>> {
    let row: usize = x.shape()[1..].iter().product();
    let mut v = Vec::with_capacity(idx.len() * row);
    for &i in idx {
        v.extend_from_slice(&x.data()[i * row..(i + 1) * row]);
    }
    let mut shape = x.shape().to_vec();
    shape[0] = idx.len();
    Ok(Tensor::new(&shape, v)?)
}
