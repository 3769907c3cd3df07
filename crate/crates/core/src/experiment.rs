//! End-to-end runs shared by the command line and the acceptance suite:
//! windowing plus subject split, pretraining a variant, and scoring its
//! representations on held-out subjects.

use diffcore::Real;
use serde::{Deserialize, Serialize};

use crate::arch::{ArchConfig, Eegm2, Tap, Variant};
use crate::data::{subject_split, window_records, Record, SignalBatch, Split};
use crate::error::{Error, Result};
use crate::loss::{acmse, LossConfig};
use crate::params::ParamStore;
use crate::repr::{auroc, balanced_accuracy, encode_stats, mean_std, Features, LogisticConfig, LogisticProbe, MlpConfig, MlpProbe};
use crate::train::{finetune, pretrain, FinetuneConfig, PretrainConfig, PretrainOutcome, TrainState};

/// Windowed train/val/test sets with disjoint subjects.
pub struct Prepared {
    pub split: Split,
    pub train: SignalBatch,
    pub val: SignalBatch,
    pub test: SignalBatch,
}

pub fn prepare(records: &[Record], window_len: usize, stride: usize, fractions: [f64; 3], seed: u64) -> Result<Prepared> {
    let metas: Vec<_> = records.iter().map(|r| r.meta.clone()).collect();
    let split = subject_split(&metas, fractions, seed)?;
    let all = window_records(records, window_len, stride)?;
    Ok(Prepared {
        train: all.from_records(&split.train)?,
        val: all.from_records(&split.val)?,
        test: all.from_records(&split.test)?,
        split,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProbeMode {
    /// logistic regression on frozen features
    Linear,
    /// MLP on frozen features
    Light,
    /// encoder and head trained together
    Fine,
    /// MLP on features of a randomly initialized encoder
    Scratch,
}

impl std::str::FromStr for ProbeMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "linear" => Ok(ProbeMode::Linear),
            "light" => Ok(ProbeMode::Light),
            "fine" => Ok(ProbeMode::Fine),
            "scratch" => Ok(ProbeMode::Scratch),
            _ => Err(Error::Config(format!("unknown mode `{s}` (expected linear, light, fine, scratch)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProbeSettings {
    pub tap: Tap,
    pub logistic: LogisticConfig,
    pub mlp: MlpConfig,
    pub finetune: FinetuneConfig,
    /// windows per encoder forward when extracting features
    pub batch: usize,
}

impl Default for ProbeSettings {
    fn default() -> Self {
        ProbeSettings {
            tap: Tap::Enc3,
            logistic: LogisticConfig::default(),
            mlp: MlpConfig::default(),
            finetune: FinetuneConfig::default(),
            batch: 64,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeScore {
    pub balanced_acc: f64,
    pub auroc: f64,
}

/// Trains the `mode` classifier on `train` and scores it on `test`. For
/// `Scratch`, pass freshly initialized parameters. `seed` drives the head
/// initialization and shuffling.
pub fn probe<R: Real>(
    model: &Eegm2,
    params: &ParamStore<R>,
    train: &SignalBatch,
    test: &SignalBatch,
    mode: ProbeMode,
    settings: &ProbeSettings,
    seed: u64,
) -> Result<ProbeScore> {
    let y_test = test.labels()?;
    if let ProbeMode::Fine = mode {
        let cfg = FinetuneConfig { seed, tap: settings.tap, ..settings.finetune.clone() };
        let out = finetune(model, params, train, test, &cfg)?;
        let auroc = out.auroc.ok_or_else(|| Error::Invalid("AUROC needs a binary task".into()))?;
        return Ok(ProbeScore { balanced_acc: out.balanced_accuracy, auroc });
    }
    let ztr = Features::from_repr(&encode_stats(model, params, &train.x, settings.tap, settings.batch)?)?;
    let zte = Features::from_repr(&encode_stats(model, params, &test.x, settings.tap, settings.batch)?)?;
    let (pred, score) = match mode {
        ProbeMode::Linear => LogisticProbe::fit(&ztr, train.labels()?, &settings.logistic)?.0.predict(&zte)?,
        _ => MlpProbe::fit(&ztr, train.labels()?, &MlpConfig { seed, ..settings.mlp.clone() })?.predict(&zte)?,
    };
    let classes = {
        let mut c = train.labels()?.to_vec();
        c.sort_unstable();
        c.dedup();
        c
    };
    if classes.len() != 2 {
        return Err(Error::Invalid("AUROC needs a binary task".into()));
    }
    let bin: Vec<usize> = y_test.iter().map(|l| usize::from(*l == classes[1])).collect();
    Ok(ProbeScore { balanced_acc: balanced_accuracy(y_test, &pred)?, auroc: auroc(&bin, &score)? })
}

/// Loss weights actually used for a variant: the L1-only ablation drops the
/// spectral term whatever the configuration says.
pub fn effective_loss(variant: Variant, cfg: LossConfig) -> LossConfig {
    if variant.spectral_loss() {
        cfg
    } else {
        LossConfig { beta: 0.0, ..cfg }
    }
}

pub struct VariantRun<R> {
    pub model: Eegm2,
    pub params: ParamStore<R>,
    pub pretrain: PretrainOutcome<R>,
    /// reconstruction ACMSE on the test subjects
    pub test_acmse: f64,
    pub seconds_per_epoch: f64,
}

/// Builds `arch` with `seed`, pretrains it on the training subjects and
/// measures test reconstruction error.
pub fn pretrain_variant<R: Real>(arch: &ArchConfig, prepared: &Prepared, cfg: &PretrainConfig, seed: u64) -> Result<VariantRun<R>> {
    let (model, mut params) = Eegm2::new::<R>(arch, seed)?;
    let cfg = PretrainConfig { seed, loss: effective_loss(arch.variant, cfg.loss), ..cfg.clone() };
    let outcome = pretrain(&model, &mut params, &prepared.train, &cfg, TrainState::default(), |_, _, _| Ok(()))?;
    let test_acmse = if prepared.test.is_empty() {
        f64::NAN
    } else {
        let x = prepared.test.x_as::<R>()?;
        acmse(&x, &model.reconstruct(&params, &x)?)?
    };
    let seconds_per_epoch = outcome.epochs.iter().map(|e| e.seconds).sum::<f64>() / outcome.epochs.len().max(1) as f64;
    Ok(VariantRun { model, params, pretrain: outcome, test_acmse, seconds_per_epoch })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
    pub runs: Vec<f64>,
}

impl Summary {
    pub fn of(runs: Vec<f64>) -> Self {
        let (mean, std) = mean_std(&runs);
        Summary { mean, std, runs }
    }
}
