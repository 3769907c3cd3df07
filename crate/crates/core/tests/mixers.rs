use diffcore::check::{grad_check, CheckOptions};
use diffcore::{Tape, Tensor};
use eegm2::ssd::{attention, scan};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn engine(e: eegm2::Error) -> diffcore::Error {
    diffcore::Error::Invalid(e.to_string())
}

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

#[test]
fn scan_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (b, t, g, p, n) = (2, 11, 2, 2, 3);
    let x = rand_tensor(&mut rng, &[b, t, g * p], -1.0, 1.0);
    let a = rand_tensor(&mut rng, &[b, t, g], 0.3, 0.95);
    let bb = rand_tensor(&mut rng, &[b, t, n], -1.0, 1.0);
    let c = rand_tensor(&mut rng, &[b, t, n], -1.0, 1.0);
    let w = rand_tensor(&mut rng, &[b, t, g * p], -1.0, 1.0);
    for chunk in [1, 4, 16] {
        let w = w.clone();
        let report = grad_check(
            move |tape, v| {
                let y = scan(tape, &v[0], &v[1], &v[2], &v[3], chunk).map_err(engine)?;
                let wv = tape.constant(w.clone());
                tape.sum_all(&tape.mul(&y, &wv)?)
            },
            &[x.clone(), a.clone(), bb.clone(), c.clone()],
            CheckOptions::default(),
        )
        .unwrap();
        assert!(report.max_error < 1e-6, "chunk {chunk}: {report:?}");
    }
}

/// Scaled dot-product attention computed entry by entry.
fn attention_oracle(qkv: &Tensor<f64>, heads: usize) -> Vec<f64> {
    let (nb, t, d) = (qkv.dim(0), qkv.dim(1), qkv.dim(2) / 3);
    let hd = d / heads;
    let at = |b: usize, i: usize, k: usize| qkv.data()[(b * t + i) * 3 * d + k];
    let mut out = vec![0.0; nb * t * d];
    for b in 0..nb {
        for h in 0..heads {
            for i in 0..t {
                let s: Vec<f64> = (0..t)
                    .map(|j| (0..hd).map(|e| at(b, i, h * hd + e) * at(b, j, d + h * hd + e)).sum::<f64>() / (hd as f64).sqrt())
                    .collect();
                let m = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let z: f64 = s.iter().map(|v| (v - m).exp()).sum();
                for e in 0..hd {
                    out[(b * t + i) * d + h * hd + e] = (0..t).map(|j| (s[j] - m).exp() / z * at(b, j, 2 * d + h * hd + e)).sum();
                }
            }
        }
    }
    out
}

#[test]
fn attention_matches_direct_formula() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let qkv = rand_tensor(&mut rng, &[2, 9, 12], -2.0, 2.0);
    let tape = Tape::no_grad();
    let y = attention(&tape, &tape.constant(qkv.clone()), 2).unwrap();
    for (g, w) in y.value().data().iter().zip(attention_oracle(&qkv, 2)) {
        assert!((g - w).abs() < 1e-12);
    }
}

#[test]
fn attention_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let qkv = rand_tensor(&mut rng, &[1, 6, 12], -1.0, 1.0);
    let w = rand_tensor(&mut rng, &[1, 6, 4], -1.0, 1.0);
    let report = grad_check(
        move |tape, v| {
            let y = attention(tape, &v[0], 2).map_err(engine)?;
            tape.sum_all(&tape.mul(&y, &tape.constant(w.clone()))?)
        },
        &[qkv],
        CheckOptions::default(),
    )
    .unwrap();
    assert!(report.max_error < 1e-6, "{report:?}");
}
