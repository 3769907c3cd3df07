use diffcore::check::{grad_check, CheckOptions};
use diffcore::{Tape, Tensor, Var};
use eegm2::loss::{acmse, l1_temporal, reconstruction_loss, spectral_mse, LossConfig};
use proptest::prelude::*;

fn eval(f: impl Fn(&Tape<f64>, &Var<f64>, &Var<f64>) -> eegm2::Result<Var<f64>>, x: &Tensor<f64>, y: &Tensor<f64>) -> f64 {
    let tape = Tape::no_grad();
    f(&tape, &tape.constant(x.clone()), &tape.constant(y.clone())).unwrap().value().item().unwrap()
}

fn pair(len: usize) -> impl Strategy<Value = (Tensor<f64>, Tensor<f64>)> {
    (1usize..=3, 1usize..=3).prop_flat_map(move |(b, c)| {
        let n = b * c * len;
        (prop::collection::vec(-5.0f64..5.0, n), prop::collection::vec(-5.0f64..5.0, n))
            .prop_map(move |(x, y)| (Tensor::new(&[b, c, len], x).unwrap(), Tensor::new(&[b, c, len], y).unwrap()))
    })
}

/// Spectral term computed with a direct DFT.
fn spectral_oracle(x: &Tensor<f64>, y: &Tensor<f64>) -> f64 {
    let t = x.dim(2);
    let bins = t / 2 + 1;
    let mag = |s: &[f64], k: usize| {
        let (mut re, mut im) = (0.0, 0.0);
        for (n, v) in s.iter().enumerate() {
            let w = -2.0 * std::f64::consts::PI * (k * n) as f64 / t as f64;
            re += v * w.cos();
            im += v * w.sin();
        }
        re.hypot(im)
    };
    let mut total = 0.0;
    let rows = x.len() / t;
    for r in 0..rows {
        let (a, b) = (&x.data()[r * t..(r + 1) * t], &y.data()[r * t..(r + 1) * t]);
        total += (0..bins).map(|k| (mag(a, k) - mag(b, k)).powi(2)).sum::<f64>();
    }
    total / (rows * bins) as f64
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn losses_are_non_negative_and_vanish_on_identity((x, y) in (2usize..=24).prop_flat_map(pair)) {
        let cfg = LossConfig::default();
        prop_assert!(eval(l1_temporal, &x, &y) >= 0.0);
        prop_assert!(eval(spectral_mse, &x, &y) >= 0.0);
        prop_assert!(eval(|t, a, b| reconstruction_loss(t, a, b, &cfg), &x, &y) > 0.0);
        prop_assert_eq!(eval(|t, a, b| reconstruction_loss(t, a, b, &cfg), &x, &x), 0.0);
    }

    #[test]
    fn spectral_term_matches_direct_dft((x, y) in (2usize..=33).prop_flat_map(pair)) {
        let got = eval(spectral_mse, &x, &y);
        let want = spectral_oracle(&x, &y);
        prop_assert!((got - want).abs() <= 1e-9 * (1.0 + want));
    }

    #[test]
    fn acmse_ignores_joint_channel_permutation((x, y) in (1usize..=16).prop_flat_map(pair), rot in 0usize..3) {
        let (b, c, t) = (x.dim(0), x.dim(1), x.dim(2));
        let perm = |s: &Tensor<f64>| {
            let mut v = vec![0.0; s.len()];
            for bi in 0..b {
                for ch in 0..c {
                    let dst = (ch + rot) % c;
                    v[(bi * c + dst) * t..(bi * c + dst + 1) * t].copy_from_slice(&s.data()[(bi * c + ch) * t..(bi * c + ch + 1) * t]);
                }
            }
            Tensor::new(s.shape(), v).unwrap()
        };
        let a = acmse(&x, &y).unwrap();
        prop_assert!((acmse(&perm(&x), &perm(&y)).unwrap() - a).abs() <= 1e-12 * (1.0 + a));
    }
}

#[test]
fn worked_examples() {
    let ones = Tensor::new(&[1, 1, 4], vec![1.0; 4]).unwrap();
    let zeros = Tensor::zeros(&[1, 1, 4]).unwrap();
    assert!((eval(spectral_mse, &ones, &zeros) - 16.0 / 3.0).abs() < 1e-12);
    assert_eq!(eval(l1_temporal, &ones, &zeros), 1.0);
    let both = eval(|t, a, b| reconstruction_loss(t, a, b, &LossConfig::default()), &ones, &zeros);
    assert!((both - (1.0 + 16.0 / 3.0)).abs() < 1e-12);
    let l1_only = LossConfig { alpha: 1.0, beta: 0.0 };
    assert_eq!(eval(|t, a, b| reconstruction_loss(t, a, b, &l1_only), &ones, &zeros), 1.0);
}

#[test]
fn gradient_wrt_reconstruction_matches_finite_differences() {
    // offsets keep every |x - x̂| away from the L1 kink
    let x: Vec<f64> = (0..2 * 3 * 17).map(|i| ((i * 37 % 23) as f64 - 11.0) / 7.0).collect();
    let xh: Vec<f64> = x.iter().enumerate().map(|(i, v)| v + if i % 2 == 0 { 0.3 } else { -0.45 }).collect();
    let x = Tensor::new(&[2, 3, 17], x).unwrap();
    let xh = Tensor::new(&[2, 3, 17], xh).unwrap();
    let cfg = LossConfig { alpha: 0.7, beta: 1.3 };
    let report = grad_check(
        |tape, v| {
            let xv = tape.constant(x.clone());
            reconstruction_loss(tape, &xv, &v[0], &cfg).map_err(|e| diffcore::Error::Invalid(e.to_string()))
        },
        &[xh],
        CheckOptions::default(),
    )
    .unwrap();
    assert!(report.max_error < 1e-4, "{report:?}");
}
