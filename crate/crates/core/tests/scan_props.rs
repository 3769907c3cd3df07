use diffcore::{Real, Tape, Tensor};
use eegm2::ssd::{decay_factor, scan_chunked, scan_naive, SsdBlock, SsdConfig};
use eegm2::params::{Init, ParamStore};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

struct Instance<R> {
    x: Tensor<R>,
    a: Tensor<R>,
    b: Tensor<R>,
    c: Tensor<R>,
}

fn normal<R: Real>(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<R> {
    let n = shape.iter().product();
    let v = (0..n).map(|_| R::of_f64(rng.sample::<f64, _>(StandardNormal))).collect();
    Tensor::new(shape, v).unwrap()
}

fn instance<R: Real>(seed: u64, batch: usize, len: usize, groups: usize, per_group: usize, state: usize) -> Instance<R> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = batch * len * groups;
    let a = (0..n).map(|_| R::of_f64(rng.random_range(0.5..1.0))).collect();
    Instance {
        x: normal(&mut rng, &[batch, len, groups * per_group]),
        a: Tensor::new(&[batch, len, groups], a).unwrap(),
        b: normal(&mut rng, &[batch, len, state]),
        c: normal(&mut rng, &[batch, len, state]),
    }
}

fn max_rel(got: &Tensor<impl Real>, want: &Tensor<impl Real>) -> f64 {
    got.to_f64_vec()
        .iter()
        .zip(want.to_f64_vec())
        .map(|(g, w)| (g - w).abs() / (1.0 + w.abs()))
        .fold(0.0, f64::max)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn chunked_matches_naive_f64(seed in any::<u64>(), len in 1usize..=512, chunk in 1usize..=96,
                                 groups in 1usize..=3, per_group in 1usize..=3, state in 1usize..=5) {
        let i = instance::<f64>(seed, 1, len, groups, per_group, state);
        let want = scan_naive(&i.x, &i.a, &i.b, &i.c).unwrap();
        let got = scan_chunked(&i.x, &i.a, &i.b, &i.c, chunk).unwrap();
        prop_assert!(max_rel(&got, &want) < 1e-10);
    }

    #[test]
    fn chunked_matches_naive_f32(seed in any::<u64>(), len in 1usize..=256, chunk in 1usize..=80) {
        let i = instance::<f32>(seed, 2, len, 2, 2, 3);
        let want = scan_naive(&i.x, &i.a, &i.b, &i.c).unwrap();
        let got = scan_chunked(&i.x, &i.a, &i.b, &i.c, chunk).unwrap();
        prop_assert!(max_rel(&got, &want) < 1e-5);
    }

    #[test]
    fn scan_is_linear_in_input(seed in any::<u64>(), len in 1usize..=200, al in -3.0f64..3.0, be in -3.0f64..3.0) {
        let i = instance::<f64>(seed, 1, len, 2, 2, 3);
        let x2 = instance::<f64>(seed ^ 0xabcdef, 1, len, 2, 2, 3).x;
        let mix: Vec<f64> = i.x.data().iter().zip(x2.data()).map(|(p, q)| al * p + be * q).collect();
        let mix = Tensor::new(i.x.shape(), mix).unwrap();
        let y1 = scan_chunked(&i.x, &i.a, &i.b, &i.c, 16).unwrap();
        let y2 = scan_chunked(&x2, &i.a, &i.b, &i.c, 16).unwrap();
        let want: Vec<f64> = y1.data().iter().zip(y2.data()).map(|(p, q)| al * p + be * q).collect();
        let got = scan_chunked(&mix, &i.a, &i.b, &i.c, 16).unwrap();
        prop_assert!(max_rel(&got, &Tensor::new(i.x.shape(), want).unwrap()) < 1e-6);
    }

    #[test]
    fn decays_stay_inside_unit_interval(dt in 1e-4f64..1.0, a_log in -2.0f64..2.8) {
        let a = decay_factor(dt, a_log);
        prop_assert!(a > 0.0 && a < 1.0);
    }
}

#[test]
fn chunk_size_does_not_change_batch_results() {
    let i = instance::<f64>(9, 3, 130, 4, 2, 6);
    let want = scan_naive(&i.x, &i.a, &i.b, &i.c).unwrap();
    for chunk in [1, 7, 64, 130, 500] {
        assert!(max_rel(&scan_chunked(&i.x, &i.a, &i.b, &i.c, chunk).unwrap(), &want) < 1e-10, "chunk {chunk}");
    }
}

#[test]
fn block_with_zeroed_output_projection_is_identity() {
    for mode_heads in [2usize, 4] {
        let cfg = SsdConfig::new(8, 4, mode_heads);
        let mut store = ParamStore::<f64>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let block = SsdBlock::new(&mut Init { store: &mut store, rng: &mut rng }, "blk", &cfg).unwrap();
        block.zero_output(&mut store).unwrap();
        let x = normal::<f64>(&mut rng, &[2, 8, 19]);
        let tape = Tape::no_grad();
        let p = store.bind_frozen(&tape);
        let y = block.forward(&tape, &p, &tape.constant(x.clone())).unwrap();
        assert_eq!(y.value().data(), x.data());
    }
}
