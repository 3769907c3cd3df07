use diffcore::ops::rfft_mag;
use diffcore::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn direct_dft_mag(x: &[f64]) -> Vec<f64> {
    let t = x.len();
    (0..=t / 2)
        .map(|k| {
            let (mut re, mut im) = (0.0, 0.0);
            for (n, &v) in x.iter().enumerate() {
                let th = -2.0 * std::f64::consts::PI * (k * n) as f64 / t as f64;
                re += v * th.cos();
                im += v * th.sin();
            }
            re.hypot(im)
        })
        .collect()
}

#[test]
fn matches_direct_dft_for_all_short_lengths() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for t in 2..=64 {
        for _ in 0..4 {
            let x: Vec<f64> = (0..t).map(|_| rng.random_range(-3.0..3.0)).collect();
            let fast = rfft_mag(&Tensor::new(&[1, t], x.clone()).unwrap()).unwrap();
            let slow = direct_dft_mag(&x);
            assert_eq!(fast.shape(), &[1, t / 2 + 1]);
            let scale = slow.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-12);
            for (a, b) in fast.data().iter().zip(&slow) {
                assert!((a - b).abs() / scale < 1e-6, "T={t}: {a} vs {b}");
            }
        }
    }
}

#[test]
fn real32_agrees_with_oracle() {
    let x: Vec<f64> = (0..50).map(|i| ((i * 37) % 11) as f64 - 5.0).collect();
    let t32 = Tensor::<f32>::from_f64(&[50], &x).unwrap();
    let fast = rfft_mag(&t32).unwrap();
    for (a, b) in fast.data().iter().zip(direct_dft_mag(&x)) {
        assert!((*a as f64 - b).abs() / b.abs().max(1.0) < 1e-5);
    }
}
