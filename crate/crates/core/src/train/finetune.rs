use diffcore::ops::log_softmax;
use diffcore::{Real, Tape, Tensor, Var};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::arch::{Eegm2, Tap};
use crate::data::SignalBatch;
use crate::error::{Error, Result};
use crate::params::{Bound, Init, ParamStore};
use crate::repr::{auroc, balanced_accuracy, encode_stats, stats_op, Features, MlpHead, Standardizer};
use crate::train::optim::{AdamW, OptimConfig, Schedule};
use crate::train::rows;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FinetuneConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub hidden: Vec<usize>,
    pub tap: Tap,
    pub seed: u64,
    /// train the head only
    pub freeze_encoder: bool,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        FinetuneConfig {
            lr: 1e-4,
            weight_decay: 1e-2,
            epochs: 5,
            batch_size: 32,
            hidden: vec![128, 64],
            tap: Tap::Enc3,
            seed: 0,
            freeze_encoder: false,
        }
    }
}

pub struct FinetuneOutcome<R> {
    pub balanced_accuracy: f64,
    /// present for binary tasks
    pub auroc: Option<f64>,
    pub classes: Vec<usize>,
    pub params: ParamStore<R>,
    pub head: MlpHead,
    pub head_params: ParamStore<R>,
    pub epoch_losses: Vec<f64>,
}

/// Encoder tap, summary statistics, fixed standardization, MLP head.
struct Classifier<'a> {
    model: &'a Eegm2,
    tap: Tap,
    head: MlpHead,
    shift: Vec<f64>,
    scale: Vec<f64>,
}

impl Classifier<'_> {
    fn logits<R: Real>(&self, tape: &Tape<R>, enc: &Bound<R>, head: &Bound<R>, x: Tensor<R>) -> Result<Var<R>> {
        let b = x.shape()[0];
        let f = self.model.tap_features(tape, enc, &tape.constant(x), self.tap)?;
        let z = stats_op(tape, &f)?;
        let width = self.scale.len();
        let z = tape.reshape(&z, &[b, width])?;
        let scale = tape.constant(Tensor::from_f64(&[width], &self.scale)?);
        let shift: Vec<f64> = (0..b).flat_map(|_| self.shift.iter().copied()).collect();
        let z = tape.add(&tape.mul_bcast_last(&z, &scale)?, &tape.constant(Tensor::from_f64(&[b, width], &shift)?))?;
        self.head.forward(tape, head, &z)
    }
}

fn grads_of<R: Real>(grads: &diffcore::Grads<R>, bound: &Bound<R>) -> Result<Vec<Tensor<R>>> {
    Ok(bound.vars().iter().map(|v| grads.get_or_zeros(v)).collect::<diffcore::Result<Vec<_>>>()?)
}

/// Cross-entropy training of encoder and head together (or the head alone
/// when `freeze_encoder`), then evaluation on `test`. `params` is not
/// modified; the tuned copy is returned.
pub fn finetune<R: Real>(
    model: &Eegm2,
    params: &ParamStore<R>,
    train: &SignalBatch,
    test: &SignalBatch,
    cfg: &FinetuneConfig,
) -> Result<FinetuneOutcome<R>> {
    if cfg.batch_size == 0 || cfg.epochs == 0 {
        return Err(Error::Config("fine-tuning needs positive epochs and batch_size".into()));
    }
    for (name, set) in [("training", train), ("test", test)] {
        if set.channels() != model.cfg.in_channels {
            return Err(Error::Invalid(format!(
                "{name} data has {} channels, checkpoint expects {}",
                set.channels(),
                model.cfg.in_channels
            )));
        }
    }
    let y_train = train.labels()?;
    let y_test = test.labels()?;
    let mut classes = y_train.to_vec();
    classes.sort_unstable();
    classes.dedup();
    if classes.len() < 2 {
        return Err(Error::Invalid("fine-tuning needs at least 2 classes".into()));
    }
    if let Some(l) = y_test.iter().find(|l| classes.binary_search(l).is_err()) {
        return Err(Error::Invalid(format!("test label {l} does not occur in training labels {classes:?}")));
    }
    let target = |l: &usize| classes.binary_search(l).expect("checked");

    let mut params = params.clone();
    let stats0 = Features::from_repr(&encode_stats(model, &params, &train.x, cfg.tap, cfg.batch_size)?)?;
    let std = Standardizer::fit(&stats0)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut head_params = ParamStore::new();
    let mut dims = vec![stats0.dim];
    dims.extend(&cfg.hidden);
    dims.push(classes.len());
    let head = MlpHead::new(&mut Init { store: &mut head_params, rng: &mut rng }, "head", &dims)?;
    let clf = Classifier {
        model,
        tap: cfg.tap,
        head,
        shift: std.mean.iter().zip(&std.scale).map(|(m, s)| -m * s).collect(),
        scale: std.scale.clone(),
    };
    let ocfg = OptimConfig { init_lr: cfg.lr, weight_decay: cfg.weight_decay, schedule: Schedule::Constant, ..OptimConfig::default() };
    let mut enc_opt = AdamW::new(ocfg.clone(), &params)?;
    let mut head_opt = AdamW::new(ocfg, &head_params)?;
    let train_x: Tensor<R> = train.x_as()?;
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut epoch_losses = Vec::new();
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let tape = Tape::new();
            let enc = if cfg.freeze_encoder { params.bind_frozen(&tape) } else { params.bind(&tape) };
            let hp = head_params.bind(&tape);
            let logits = clf.logits(&tape, &enc, &hp, rows(&train_x, chunk)?)?;
            let yb: Vec<usize> = chunk.iter().map(|&i| target(&y_train[i])).collect();
            let loss = tape.cross_entropy(&logits, &yb)?;
            sum += loss.value().item()?.as_f64() * chunk.len() as f64;
            let grads = tape.backward(&loss)?;
            let hg = grads_of(&grads, &hp)?;
            if !cfg.freeze_encoder {
                let eg = grads_of(&grads, &enc)?;
                drop(grads);
                enc_opt.update(&mut params, &eg, cfg.lr)?;
            }
            head_opt.update(&mut head_params, &hg, cfg.lr)?;
        }
        epoch_losses.push(sum / train.len() as f64);
    }

    let test_x: Tensor<R> = test.x_as()?;
    let (mut pred, mut score) = (Vec::new(), Vec::new());
    let idx: Vec<usize> = (0..test.len()).collect();
    for chunk in idx.chunks(cfg.batch_size) {
        let tape = Tape::no_grad();
        let logits = clf.logits(&tape, &params.bind_frozen(&tape), &head_params.bind_frozen(&tape), rows(&test_x, chunk)?)?;
        let lp = log_softmax(logits.value())?;
        for row in lp.data().chunks_exact(classes.len()) {
            let (k, _) = row.iter().enumerate().max_by(|a, b| a.1.as_f64().total_cmp(&b.1.as_f64())).expect("nonempty");
            pred.push(classes[k]);
            score.push(row.get(1).map_or(0.0, |v| v.as_f64().exp()));
        }
    }
    let auroc = if classes.len() == 2 {
        let bin: Vec<usize> = y_test.iter().map(|l| usize::from(*l == classes[1])).collect();
        auroc(&bin, &score).ok()
    } else {
        None
    };
    Ok(FinetuneOutcome {
        balanced_accuracy: balanced_accuracy(y_test, &pred)?,
        auroc,
        classes,
        params,
        head: clf.head,
        head_params,
        epoch_losses,
    })
}
