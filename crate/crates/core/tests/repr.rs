use diffcore::check::{grad_check, CheckOptions};
use diffcore::Tensor;
use eegm2::arch::{ArchConfig, Eegm2, Tap};
use eegm2::data::{synth_generate, window_records, SynthConfig};
use eegm2::experiment::{probe, ProbeMode, ProbeSettings};
use eegm2::repr::{auroc, balanced_accuracy, encode_stats, extract_stats, stats_op, write_repr_csv, Features, LogisticConfig, LogisticProbe, MlpConfig, MlpProbe, NUM_STATS};
use proptest::prelude::*;

fn stats_of(values: &[f64]) -> Vec<f64> {
    let f = Tensor::new(&[1, 1, values.len()], values.to_vec()).unwrap();
    extract_stats(&f).unwrap().to_vec()
}

#[test]
fn arithmetic_sequence_closed_forms() {
    let n = 100.0f64;
    let s = stats_of(&(1..=100).map(f64::from).collect::<Vec<_>>());
    let sigma = ((n * n - 1.0) / 12.0).sqrt();
    let mut want = vec![1.0, n, (n + 1.0) / 2.0, sigma];
    want.extend([0.05, 0.25, 0.5, 0.75, 0.95].map(|p| 1.0 + (n - 1.0) * p));
    for (g, w) in s.iter().zip(&want) {
        assert!((g - w).abs() < 1e-6, "{s:?} vs {want:?}");
    }
    assert!((sigma - 28.8661).abs() < 1e-4);
}

#[test]
fn constant_channel() {
    assert_eq!(stats_of(&[5.0; 7]), vec![5.0, 5.0, 5.0, 0.0, 5.0, 5.0, 5.0, 5.0, 5.0]);
    assert!(extract_stats(&Tensor::<f64>::zeros(&[1, 2, 0]).unwrap()).is_err());
}

fn ordered(s: &[f64]) -> bool {
    let (min, max, mean, std) = (s[0], s[1], s[2], s[3]);
    let q = &s[4..];
    min <= q[0] && q.windows(2).all(|w| w[0] <= w[1]) && q[4] <= max && min <= mean && mean <= max && std >= 0.0
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn statistics_are_ordered(v in prop::collection::vec(-1e6f64..1e6, 1..64)) {
        prop_assert!(ordered(&stats_of(&v)));
    }
}

proptest! {
    #[test]
    fn statistics_ignore_temporal_order(v in prop::collection::vec(-100.0f64..100.0, 2..50), k in 0usize..50) {
        let mut rotated = v.clone();
        rotated.rotate_left(k % v.len());
        rotated.reverse();
        for (a, b) in stats_of(&v).iter().zip(stats_of(&rotated)) {
            prop_assert!((a - b).abs() <= 1e-9 * (1.0 + a.abs()));
        }
    }

    #[test]
    fn auroc_ignores_increasing_transforms(s in prop::collection::vec(-5.0f64..5.0, 4..40)) {
        let y: Vec<usize> = (0..s.len()).map(|i| i % 2).collect();
        let t: Vec<f64> = s.iter().map(|v| v.exp() * 3.0 + 1.0).collect();
        prop_assert_eq!(auroc(&y, &s).unwrap(), auroc(&y, &t).unwrap());
    }

    #[test]
    fn balanced_accuracy_ignores_relabeling(y in prop::collection::vec(0usize..3, 6..40), p in prop::collection::vec(0usize..3, 40)) {
        let mut y = y;
        y[0] = 0; y[1] = 1; y[2] = 2;
        let pred = &p[..y.len()];
        let perm = [2usize, 0, 1];
        let y2: Vec<usize> = y.iter().map(|&c| perm[c]).collect();
        let p2: Vec<usize> = pred.iter().map(|&c| perm[c]).collect();
        let a = balanced_accuracy(&y, pred).unwrap();
        prop_assert!((a - balanced_accuracy(&y2, &p2).unwrap()).abs() < 1e-12);
    }
}

#[test]
fn metric_worked_examples() {
    assert_eq!(auroc(&[0, 0, 1, 1], &[0.1, 0.4, 0.35, 0.8]).unwrap(), 0.75);
    assert_eq!(auroc(&[0, 1, 0, 1], &[2.0; 4]).unwrap(), 0.5);
    assert_eq!(auroc(&[0, 0, 1], &[0.0, 0.1, 0.9]).unwrap(), 1.0);
    assert!(auroc(&[1, 1], &[0.2, 0.3]).is_err());
    assert_eq!(balanced_accuracy(&[0, 1, 0, 1], &[0, 1, 0, 1]).unwrap(), 1.0);
    assert_eq!(balanced_accuracy(&[0, 0, 0, 1, 1], &[0; 5]).unwrap(), 0.5);
    // recalls 0.8 and 0.6
    let y = [0, 0, 0, 0, 0, 1, 1, 1, 1, 1];
    let p = [0, 0, 0, 0, 1, 1, 1, 1, 0, 0];
    assert!((balanced_accuracy(&y, &p).unwrap() - 0.7).abs() < 1e-12);
}

#[test]
fn differentiable_statistics_pass_gradient_check() {
    let v: Vec<f64> = (0..2 * 3 * 21).map(|i| ((i * 53 % 97) as f64 - 48.0) / 13.0).collect();
    let f = Tensor::new(&[2, 3, 21], v).unwrap();
    let w: Vec<f64> = (0..2 * 3 * NUM_STATS).map(|i| (i % 7) as f64 - 3.0).collect();
    let w = Tensor::new(&[2, 3, NUM_STATS], w).unwrap();
    let report = grad_check(
        |tape, p| {
            let s = stats_op(tape, &p[0]).map_err(|e| diffcore::Error::Invalid(e.to_string()))?;
            tape.sum_all(&tape.mul(&s, &tape.constant(w.clone()))?)
        },
        &[f],
        CheckOptions::default(),
    )
    .unwrap();
    assert!(report.max_error < 1e-6, "{report:?}");
}

fn toy() -> (Features, Vec<usize>) {
    let mut data = Vec::new();
    let mut y = Vec::new();
    for i in 0..40 {
        let c = i % 2;
        let off = if c == 1 { 2.0 } else { -2.0 };
        data.extend([off + (i as f64 * 0.37).sin(), (i as f64 * 0.91).cos() - off]);
        y.push(c);
    }
    (Features::new(40, 2, data).unwrap(), y)
}

#[test]
fn probes_fit_a_separable_set() {
    let (x, y) = toy();
    let (lin, report) = LogisticProbe::fit(&x, &y, &LogisticConfig::default()).unwrap();
    assert!(report.grad_norm < 1e-5);
    assert_eq!(lin.predict(&x).unwrap().0, y);
    let mlp = MlpProbe::fit(&x, &y, &MlpConfig::default()).unwrap();
    assert_eq!(mlp.predict(&x).unwrap().0, y);
    assert!(LogisticProbe::fit(&x, &vec![1; 40], &LogisticConfig::default()).is_err());
}

#[test]
fn probing_never_mutates_the_encoder() {
    let cfg = SynthConfig { n_subjects: 3, windows_per_subject: 4, channels: 2, window_len: 32, amplitude: 2.0, ..SynthConfig::default() };
    let data = window_records(&synth_generate(&cfg).unwrap().records(), 32, 32).unwrap();
    let (m, p) = Eegm2::new::<f32>(&ArchConfig::tiny(2), 0).unwrap();
    let before = p.fingerprint();
    let settings = ProbeSettings { mlp: MlpConfig { epochs: 3, ..MlpConfig::default() }, ..ProbeSettings::default() };
    for mode in [ProbeMode::Linear, ProbeMode::Light, ProbeMode::Fine] {
        let mut s = settings.clone();
        s.finetune.epochs = 1;
        s.finetune.freeze_encoder = false;
        probe(&m, &p, &data, &data, mode, &s, 0).unwrap();
        assert_eq!(p.fingerprint(), before, "{mode:?}");
    }
}

#[test]
fn encoded_statistics_and_export() {
    let (m, p) = Eegm2::new::<f32>(&ArchConfig::tiny(2), 0).unwrap();
    let x = Tensor::<f32>::new(&[3, 2, 16], (0..96).map(|i| (i as f32 * 0.3).sin()).collect()).unwrap();
    for tap in Tap::ALL {
        let z = encode_stats(&m, &p, &x, tap, 2).unwrap();
        assert_eq!(z.shape(), &[3, m.cfg.tap_width(tap), NUM_STATS]);
        let whole = encode_stats(&m, &p, &x, tap, 64).unwrap();
        assert_eq!(z.data(), whole.data(), "batching must not change features");
    }
    let z = encode_stats(&m, &p, &x, Tap::Enc1, 8).unwrap();
    let mut buf = Vec::new();
    let ids: Vec<String> = (0..3).map(|i| format!("w{i}")).collect();
    write_repr_csv(&mut buf, &ids, Some(&[0, 1, 0]), &z).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let mut lines = text.lines();
    let header = lines.next().unwrap();
    assert!(header.starts_with("id,label,c0_min,c0_max"));
    assert_eq!(header.split(',').count(), 2 + 6 * NUM_STATS);
    assert_eq!(lines.count(), 3);
}
