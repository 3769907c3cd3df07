use std::path::PathBuf;

use anyhow::{bail, ensure, Context, Result};
use clap::Args;
use eegm2::arch::checkpoint::Checkpoint;
use eegm2::arch::{Eegm2, Tap, Variant};
use eegm2::bench::{self, BenchMetadata, BenchVariant};
use eegm2::data::{load_dataset, manifest::write_dataset, synth_generate, Record, SynthConfig};
use eegm2::experiment::{self, prepare, probe, Prepared, ProbeMode, Summary};
use eegm2::params::ParamStore;
use eegm2::repr::{encode_stats, write_repr_csv};
use eegm2::train::{self, TrainState};
use serde::Serialize;

use crate::config::{self, AblateRun, BenchRun, DataSettings, EvalRun, Preset, PretrainRun};
use crate::output::OutDir;
use crate::Common;

#[derive(Args)]
pub struct SynthArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    subjects: Option<usize>,
    #[arg(long)]
    windows_per_subject: Option<usize>,
    #[arg(long)]
    channels: Option<usize>,
    #[arg(long)]
    window_len: Option<usize>,
    /// sampling rate in Hz
    #[arg(long)]
    fs: Option<f64>,
    /// oscillation amplitude of class 1 (0 makes the classes identical)
    #[arg(long)]
    amplitude: Option<f64>,
}

pub fn synth(a: SynthArgs) -> Result<()> {
    let mut cfg: SynthConfig = config::load(a.common.config.as_deref())?;
    set(&mut cfg.n_subjects, a.subjects);
    set(&mut cfg.windows_per_subject, a.windows_per_subject);
    set(&mut cfg.channels, a.channels);
    set(&mut cfg.window_len, a.window_len);
    set(&mut cfg.sampling_rate_hz, a.fs);
    set(&mut cfg.amplitude, a.amplitude);
    set(&mut cfg.seed, a.common.seed);
    cfg.validate()?;
    let out = OutDir::claim(&a.common, "synth", &["manifest.toml"])?;
    out.write("config.toml", config::to_toml(&cfg)?)?;
    let ds = synth_generate(&cfg)?;
    let manifest = write_dataset(&out.path, &ds.manifest, &ds.payloads, true)?;
    println!("wrote {} records to {}", ds.manifest.records.len(), manifest.display());
    out.finish()
}

fn set<T>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

fn load_records(data: &DataSettings) -> Result<Vec<Record>> {
    let path = data.manifest()?;
    let reader = load_dataset(path)?;
    reader.collect::<eegm2::Result<Vec<_>>>().with_context(|| format!("loading {}", path.display()))
}

fn prepared(data: &DataSettings) -> Result<(Prepared, usize)> {
    let records = load_records(data)?;
    ensure!(!records.is_empty(), "dataset has no records");
    let channels = records[0].data.shape()[0];
    let p = prepare(&records, data.window_len, data.stride(), data.split, data.split_seed)?;
    ensure!(!p.train.is_empty(), "no training windows after windowing");
    Ok((p, channels))
}

#[derive(Args)]
pub struct PretrainArgs {
    #[command(flatten)]
    common: Common,
    /// dataset manifest
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    variant: Option<Variant>,
    #[arg(long, value_enum)]
    preset: Option<Preset>,
    #[arg(long)]
    epochs: Option<usize>,
    /// continue from this checkpoint (architecture, step and moments)
    #[arg(long)]
    resume: Option<PathBuf>,
}

#[derive(Serialize)]
struct PretrainSummary {
    variant: Variant,
    param_count: usize,
    initial_loss: f64,
    final_train_loss: f64,
    baseline_acmse: Option<f64>,
    final_acmse: Option<f64>,
    step: u64,
    epoch: usize,
}

pub fn pretrain(a: PretrainArgs) -> Result<()> {
    let mut cfg: PretrainRun = config::load(a.common.config.as_deref())?;
    if a.data.is_some() {
        cfg.data.manifest = a.data;
    }
    set(&mut cfg.variant, a.variant);
    set(&mut cfg.preset, a.preset);
    set(&mut cfg.train.epochs, a.epochs);
    set(&mut cfg.train.seed, a.common.seed);
    let out = OutDir::claim(&a.common, "pretrain", &["checkpoint.bin", "metrics.jsonl"])?;
    let (data, channels) = prepared(&cfg.data)?;

    let (model, mut params, state) = match &a.resume {
        Some(path) => {
            let ck = Checkpoint::<f32>::load(path)?;
            let (model, params, ck) = ck.into_model()?;
            cfg.variant = ck.arch.variant;
            cfg.arch = Some(ck.arch.clone());
            (model, params, TrainState { step: ck.step, epoch: ck.epoch, moments: ck.moments })
        }
        None => {
            let arch = cfg.arch.clone().unwrap_or_else(|| cfg.preset.arch(channels)).with_variant(cfg.variant);
            cfg.arch = Some(arch.clone());
            let (m, p) = Eegm2::new::<f32>(&arch, cfg.train.seed)?;
            (m, p, TrainState::default())
        }
    };
    ensure!(
        model.cfg.in_channels == channels,
        "checkpoint expects {} channels, dataset has {channels}",
        model.cfg.in_channels
    );
    cfg.train.loss = experiment::effective_loss(cfg.variant, cfg.train.loss);
    out.write("config.toml", config::to_toml(&cfg)?)?;

    let mut history = Vec::new();
    let metrics_path = out.file("metrics.jsonl");
    let outcome = train::pretrain(&model, &mut params, &data.train, &cfg.train, state, |m, _, _| {
        history.push(m.clone());
        train::write_metrics_jsonl(&metrics_path, &history)
    })?;
    let ck = Checkpoint {
        arch: model.cfg.clone(),
        params,
        step: outcome.state.step,
        epoch: outcome.state.epoch,
        moments: outcome.state.moments.clone(),
    };
    ck.save(&out.file("checkpoint.bin"))?;
    let last = outcome.epochs.last();
    let summary = PretrainSummary {
        variant: cfg.variant,
        param_count: ck.params.count(),
        initial_loss: outcome.initial_loss,
        final_train_loss: last.map_or(f64::NAN, |m| m.train_loss),
        baseline_acmse: outcome.baseline_acmse,
        final_acmse: last.and_then(|m| m.acmse),
        step: ck.step,
        epoch: ck.epoch,
    };
    out.write("summary.toml", toml::to_string(&summary)?)?;
    println!("trained to step {} (epoch {}); checkpoint in {}", ck.step, ck.epoch, out.path.display());
    out.finish()
}

#[derive(Args)]
pub struct EvalArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// linear, light (MLP probe), fine (fine-tuning) or scratch (random encoder)
    #[arg(long)]
    mode: Option<ProbeMode>,
    /// enc1, enc2 or enc3
    #[arg(long)]
    tap: Option<Tap>,
    /// comma-separated probe seeds
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    #[arg(long)]
    export: bool,
}

#[derive(Serialize)]
struct EvalReport {
    mode: ProbeMode,
    tap: Tap,
    test_windows: usize,
    balanced_acc: Summary,
    auroc: Summary,
}

pub fn eval(a: EvalArgs) -> Result<()> {
    let mut cfg: EvalRun = config::load(a.common.config.as_deref())?;
    if a.data.is_some() {
        cfg.data.manifest = a.data;
    }
    if a.checkpoint.is_some() {
        cfg.checkpoint = a.checkpoint;
    }
    set(&mut cfg.mode, a.mode);
    set(&mut cfg.probe.tap, a.tap);
    set(&mut cfg.seeds, a.seeds);
    if let Some(s) = a.common.seed {
        cfg.seeds = vec![s];
    }
    cfg.export |= a.export;
    ensure!(!cfg.seeds.is_empty(), "at least one seed is required");
    let pretrained = match (cfg.mode, &cfg.checkpoint) {
        (ProbeMode::Scratch, _) => None,
        (_, None) => bail!("--mode {:?} needs a checkpoint (--checkpoint)", cfg.mode),
        (_, Some(p)) => Some(Checkpoint::<f32>::load(p)?.into_model()?),
    };
    let out = OutDir::claim(&a.common, "eval", &["report.toml"])?;
    out.write("config.toml", config::to_toml(&cfg)?)?;
    let (data, channels) = prepared(&cfg.data)?;
    ensure!(!data.test.is_empty(), "no test windows after the subject split");

    let (mut ba, mut auc) = (Vec::new(), Vec::new());
    let mut first: Option<(Eegm2, ParamStore<f32>)> = None;
    for &seed in &cfg.seeds {
        let (model, params) = match &pretrained {
            Some((m, p, _)) => (m.clone(), p.clone()),
            None => Eegm2::new::<f32>(&cfg.preset.arch(channels), seed)?,
        };
        ensure!(model.cfg.in_channels == channels, "checkpoint expects {} channels, dataset has {channels}", model.cfg.in_channels);
        let s = probe(&model, &params, &data.train, &data.test, cfg.mode, &cfg.probe, seed)?;
        println!("seed {seed}: balanced_acc {:.4} auroc {:.4}", s.balanced_acc, s.auroc);
        ba.push(s.balanced_acc);
        auc.push(s.auroc);
        first.get_or_insert((model, params));
    }
    if cfg.export {
        let (model, params) = first.as_ref().expect("at least one seed");
        let z = encode_stats(model, params, &data.test.x, cfg.probe.tap, cfg.probe.batch)?;
        let ids: Vec<String> = (0..data.test.len()).map(|i| format!("{}#{i}", data.test.subjects[i])).collect();
        let file = std::fs::File::create(out.file("repr_test.csv"))?;
        write_repr_csv(file, &ids, data.test.y.as_deref(), &z)?;
    }
    let report = EvalReport {
        mode: cfg.mode,
        tap: cfg.probe.tap,
        test_windows: data.test.len(),
        balanced_acc: Summary::of(ba),
        auroc: Summary::of(auc),
    };
    println!(
        "balanced_acc {:.4} ± {:.4}, auroc {:.4} ± {:.4}",
        report.balanced_acc.mean, report.balanced_acc.std, report.auroc.mean, report.auroc.std
    );
    out.write("report.toml", toml::to_string(&report)?)?;
    out.finish()
}

#[derive(Args)]
pub struct BenchArgs {
    #[command(flatten)]
    common: Common,
    /// comma-separated subset of full, light, s5
    #[arg(long, value_delimiter = ',')]
    variants: Option<Vec<String>>,
    #[arg(long, value_delimiter = ',')]
    seq_lens: Option<Vec<usize>>,
    /// memory cap in bytes; over-cap runs are recorded as out of memory
    #[arg(long)]
    cap_bytes: Option<usize>,
    #[arg(long)]
    warmup: Option<usize>,
    #[arg(long)]
    runs: Option<usize>,
    /// skip timing, measure memory only
    #[arg(long)]
    no_speed: bool,
}

pub fn bench(a: BenchArgs) -> Result<()> {
    let mut cfg: BenchRun = config::load(a.common.config.as_deref())?;
    set(&mut cfg.variants, a.variants);
    set(&mut cfg.sweep.seq_lens, a.seq_lens);
    set(&mut cfg.sweep.cap_bytes, a.cap_bytes);
    set(&mut cfg.sweep.warmup, a.warmup);
    set(&mut cfg.sweep.runs, a.runs);
    set(&mut cfg.sweep.seed, a.common.seed);
    cfg.sweep.measure_speed &= !a.no_speed;
    let variants = cfg
        .variants
        .iter()
        .map(|v| BenchVariant::by_name(v, cfg.sweep.channels))
        .collect::<eegm2::Result<Vec<_>>>()?;
    let out = OutDir::claim(&a.common, "bench", &["bench.csv", "bench_meta.toml"])?;
    out.write("config.toml", config::to_toml(&cfg)?)?;
    BenchMetadata::new(&cfg.sweep, true).write(&out.file("bench_meta.toml"))?;
    let records = bench::sweep(&variants, &cfg.sweep, |r| {
        println!(
            "{:>6} T={:>6}  {}",
            r.variant,
            r.seq_len,
            if r.oom { "out of memory".to_string() } else { format!("{} bytes, {:.4} samples/ms", r.peak_mem_bytes, r.samples_per_ms) }
        )
    })?;
    bench::write_csv(std::fs::File::create(out.file("bench.csv"))?, &records)?;
    BenchMetadata::new(&cfg.sweep, false).write(&out.file("bench_meta.toml"))?;
    out.finish()
}

#[derive(Args)]
pub struct AblateArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    data: Option<PathBuf>,
    /// comma-separated variants, e.g. full,s1,s2,s3
    #[arg(long, value_delimiter = ',')]
    variants: Option<Vec<Variant>>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
}

#[derive(Serialize)]
struct AblationRow {
    variant: Variant,
    param_count: usize,
    acmse_mean: f64,
    acmse_std: f64,
    balanced_acc_mean: f64,
    balanced_acc_std: f64,
    auroc_mean: f64,
    auroc_std: f64,
    seconds_per_epoch: f64,
}

pub fn ablate(a: AblateArgs) -> Result<()> {
    let mut cfg: AblateRun = config::load(a.common.config.as_deref())?;
    if a.data.is_some() {
        cfg.data.manifest = a.data;
    }
    set(&mut cfg.variants, a.variants);
    set(&mut cfg.train.epochs, a.epochs);
    set(&mut cfg.seeds, a.seeds);
    if let Some(s) = a.common.seed {
        cfg.seeds = vec![s];
    }
    ensure!(!cfg.seeds.is_empty() && !cfg.variants.is_empty(), "need at least one seed and one variant");
    let out = OutDir::claim(&a.common, "ablate", &["ablation.csv"])?;
    out.write("config.toml", config::to_toml(&cfg)?)?;
    let (data, channels) = prepared(&cfg.data)?;
    ensure!(!data.test.is_empty(), "no test windows after the subject split");
    let mut rows = Vec::new();
    for &variant in &cfg.variants {
        let arch = cfg.preset.arch(channels).with_variant(variant);
        let (mut err, mut ba, mut auc, mut secs) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        for &seed in &cfg.seeds {
            let run = experiment::pretrain_variant::<f32>(&arch, &data, &cfg.train, seed)?;
            let s = probe(&run.model, &run.params, &data.train, &data.test, ProbeMode::Light, &cfg.probe, seed)?;
            println!(
                "{} seed {seed}: acmse {:.4} balanced_acc {:.4} auroc {:.4} ({:.2} s/epoch)",
                variant.name(),
                run.test_acmse,
                s.balanced_acc,
                s.auroc,
                run.seconds_per_epoch
            );
            err.push(run.test_acmse);
            ba.push(s.balanced_acc);
            auc.push(s.auroc);
            secs.push(run.seconds_per_epoch);
        }
        let (e, b, u) = (Summary::of(err), Summary::of(ba), Summary::of(auc));
        rows.push(AblationRow {
            variant,
            param_count: arch.param_count(),
            acmse_mean: e.mean,
            acmse_std: e.std,
            balanced_acc_mean: b.mean,
            balanced_acc_std: b.std,
            auroc_mean: u.mean,
            auroc_std: u.std,
            seconds_per_epoch: Summary::of(secs).mean,
        });
    }
    let mut w = csv::Writer::from_path(out.file("ablation.csv"))?;
    for r in &rows {
        w.serialize(r)?;
    }
    w.flush()?;
    out.finish()
}
