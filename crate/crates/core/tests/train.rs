use diffcore::Tensor;
use eegm2::arch::{ArchConfig, Eegm2};
use eegm2::data::{synth_generate, window_records, SignalBatch, SynthConfig};
use eegm2::params::ParamStore;
use eegm2::train::{evaluate, onecycle_lr, pretrain, AdamW, OptimConfig, PretrainConfig, Schedule, StepOutcome, TrainState};
use proptest::prelude::*;

fn tiny_data(seed: u64) -> SignalBatch {
    let cfg = SynthConfig { n_subjects: 4, windows_per_subject: 4, channels: 2, window_len: 32, amplitude: 2.0, seed, ..SynthConfig::default() };
    let ds = synth_generate(&cfg).unwrap();
    window_records(&ds.records(), 32, 32).unwrap()
}

#[test]
fn schedule_hits_published_values() {
    let cfg = OptimConfig::default();
    for total in [10, 1000, 12345] {
        let peak = (0.3 * total as f64).round() as usize;
        assert!((onecycle_lr(0, total, &cfg).unwrap() - 5e-5).abs() < 1e-12);
        assert!((onecycle_lr(peak, total, &cfg).unwrap() - 5e-4).abs() < 1e-12);
        assert!((onecycle_lr(total - 1, total, &cfg).unwrap() - 5e-8).abs() < 1e-12);
    }
    assert!(onecycle_lr(10, 10, &cfg).is_err());
}

proptest! {
    #[test]
    fn schedule_is_continuous_and_unimodal(total in 20usize..5000) {
        let cfg = OptimConfig::default();
        let lrs: Vec<f64> = (0..total).map(|s| onecycle_lr(s, total, &cfg).unwrap()).collect();
        let peak = (0.3 * total as f64).round() as usize;
        for s in 1..total {
            if s <= peak {
                prop_assert!(lrs[s] >= lrs[s - 1]);
            } else {
                prop_assert!(lrs[s] <= lrs[s - 1]);
            }
        }
        // neighbours of the boundary approach max_lr as the step count grows
        let jump = (lrs[peak] - lrs[peak + 1]).max(lrs[peak] - lrs[peak - 1]);
        prop_assert!(jump <= 5e-4 * 20.0 / total as f64);
    }

    #[test]
    fn zero_gradient_without_decay_is_identity(w in prop::collection::vec(-10.0f64..10.0, 1..20), lr in 1e-6f64..1e-1, steps in 1usize..5) {
        let mut store = ParamStore::new();
        store.add("w", Tensor::new(&[w.len()], w.clone()).unwrap()).unwrap();
        let cfg = OptimConfig { weight_decay: 0.0, ..OptimConfig::default() };
        let mut opt = AdamW::new(cfg, &store).unwrap();
        for _ in 0..steps {
            opt.update(&mut store, &[Tensor::zeros(&[w.len()]).unwrap()], lr).unwrap();
        }
        prop_assert_eq!(store.get(0).data(), &w[..]);
    }
}

#[test]
fn adamw_first_step_has_magnitude_lr() {
    let mut store = ParamStore::new();
    store.add("w", Tensor::new(&[2], vec![1.0f64, -1.0]).unwrap()).unwrap();
    let cfg = OptimConfig { weight_decay: 0.0, ..OptimConfig::default() };
    let mut opt = AdamW::new(cfg, &store).unwrap();
    let out = opt.update(&mut store, &[Tensor::new(&[2], vec![0.5, -3.0]).unwrap()], 1e-3).unwrap();
    assert_eq!(out, StepOutcome::Applied);
    assert!((store.get(0).data()[0] - (1.0 - 1e-3)).abs() < 1e-10);
    assert!((store.get(0).data()[1] - (-1.0 + 1e-3)).abs() < 1e-10);
}

#[test]
fn constant_schedule_ignores_step() {
    let cfg = OptimConfig { schedule: Schedule::Constant, ..OptimConfig::default() };
    assert_eq!(cfg.lr(0, 100).unwrap(), cfg.init_lr);
    assert_eq!(cfg.lr(99, 100).unwrap(), cfg.init_lr);
}

#[test]
fn evaluation_leaves_parameters_untouched() {
    let data = tiny_data(1);
    let (m, p) = Eegm2::new::<f32>(&ArchConfig::tiny(2), 0).unwrap();
    let before = p.fingerprint();
    let (loss, err) = evaluate(&m, &p, &data.x, &PretrainConfig::default()).unwrap();
    assert!(loss > 0.0 && err > 0.0);
    assert_eq!(p.fingerprint(), before);
}

fn run(seed: u64, data: &SignalBatch) -> (Vec<(u64, Option<u64>)>, Vec<usize>, u64) {
    let (m, mut p) = Eegm2::new::<f64>(&ArchConfig::tiny(2), seed).unwrap();
    let cfg = PretrainConfig { epochs: 3, batch_size: 4, seed, ..PretrainConfig::desk() };
    let out = pretrain(&m, &mut p, data, &cfg, TrainState::default(), |_, _, _| Ok(())).unwrap();
    let curve = out.epochs.iter().map(|e| (e.train_loss.to_bits(), e.val_loss.map(f64::to_bits))).collect();
    (curve, out.val_records, p.fingerprint())
}

#[test]
fn training_is_bit_reproducible_at_f64() {
    let data = tiny_data(2);
    let a = run(5, &data);
    assert_eq!(a, run(5, &data));
    assert_ne!(a.0, run(6, &data).0);
}

#[test]
fn resuming_continues_the_step_counter() {
    let data = tiny_data(3);
    let (m, mut p) = Eegm2::new::<f32>(&ArchConfig::tiny(2), 0).unwrap();
    let cfg = PretrainConfig { epochs: 1, batch_size: 4, ..PretrainConfig::desk() };
    let first = pretrain(&m, &mut p, &data, &cfg, TrainState::default(), |_, _, _| Ok(())).unwrap();
    let steps = first.state.step;
    assert!(steps > 0);
    let second = pretrain(&m, &mut p, &data, &cfg, first.state, |_, _, _| Ok(())).unwrap();
    assert_eq!(second.state.step, 2 * steps);
    assert_eq!(second.state.epoch, 2);
}

#[test]
fn divergence_is_reported() {
    let data = tiny_data(4);
    let (m, mut p) = Eegm2::new::<f32>(&ArchConfig::tiny(2), 0).unwrap();
    let mut cfg = PretrainConfig { epochs: 3, batch_size: 4, divergence_factor: 1.0 + 1e-9, ..PretrainConfig::desk() };
    cfg.optim.max_lr = 50.0;
    cfg.optim.init_lr = 50.0;
    let Err(err) = pretrain(&m, &mut p, &data, &cfg, TrainState::default(), |_, _, _| Ok(())) else {
        panic!("training at lr 50 should diverge");
    };
    assert!(matches!(err, eegm2::Error::Diverged { .. }), "{err}");
}

/// The desk preset should cut its training loss tenfold in 50 epochs on the
/// default synthetic task.
#[test]
fn desk_pretraining_reduces_loss_tenfold() {
    let ds = synth_generate(&SynthConfig::default()).unwrap();
    let data = window_records(&ds.records(), 256, 256).unwrap();
    let (m, mut p) = Eegm2::new::<f32>(&ArchConfig::desk(14), 0).unwrap();
    let out = pretrain(&m, &mut p, &data, &PretrainConfig::desk(), TrainState::default(), |_, _, _| Ok(())).unwrap();
    let last = out.epochs.last().unwrap().train_loss;
    assert!(last <= 0.1 * out.initial_loss, "{last} vs initial {}", out.initial_loss);
}
