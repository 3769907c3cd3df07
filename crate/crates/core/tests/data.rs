use std::collections::HashSet;

use diffcore::Tensor;
use eegm2::data::manifest::{write_dataset, Manifest, RecordMeta};
use eegm2::data::{load_dataset, subject_split, synth_generate, window, window_records, Record, SynthConfig, ALPHA_BAND};
use proptest::prelude::*;

fn meta(file: &str, subject: &str, n: usize) -> RecordMeta {
    RecordMeta { file: file.into(), subject_id: subject.into(), label: Some(0), n_samples: n, channels: None, sampling_rate_hz: None }
}

#[test]
fn write_then_read_is_bit_identical() {
    let dir = tempfile::tempdir().unwrap();
    let ds = synth_generate(&SynthConfig { n_subjects: 3, windows_per_subject: 2, ..SynthConfig::default() }).unwrap();
    let path = write_dataset(dir.path(), &ds.manifest, &ds.payloads, false).unwrap();
    let back: Vec<Record> = load_dataset(&path).unwrap().collect::<Result<_, _>>().unwrap();
    assert_eq!(back.len(), ds.payloads.len());
    for (r, p) in back.iter().zip(&ds.payloads) {
        let bits = |t: &Tensor<f32>| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&r.data), bits(p));
    }
    assert!(write_dataset(dir.path(), &ds.manifest, &ds.payloads, false).is_err());
    assert!(write_dataset(dir.path(), &ds.manifest, &ds.payloads, true).is_ok());
}

#[test]
fn empty_manifest_yields_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_dataset(dir.path(), &Manifest::new("empty", 128.0, 4), &[], false).unwrap();
    assert_eq!(load_dataset(&path).unwrap().count(), 0);
}

#[test]
fn declared_length_mismatch_names_the_record() {
    let dir = tempfile::tempdir().unwrap();
    let mut m = Manifest::new("bad", 128.0, 2);
    m.records.push(meta("r0.bin", "a", 8));
    let path = write_dataset(dir.path(), &m, &[Tensor::zeros(&[2, 8]).unwrap()], false).unwrap();
    let mut m2 = m.clone();
    m2.records[0].n_samples = 9;
    std::fs::write(&path, m2.to_toml().unwrap()).unwrap();
    let err = load_dataset(&path).unwrap().next().unwrap().unwrap_err().to_string();
    assert!(err.contains("r0.bin"), "{err}");
}

#[test]
fn window_counts() {
    let rec = |n: usize| Tensor::<f32>::zeros(&[2, n]).unwrap();
    assert_eq!(window(&rec(1000), 256, 256).unwrap().len(), 3);
    assert_eq!(window(&rec(256), 256, 256).unwrap().len(), 1);
    assert_eq!(window(&rec(512), 256, 128).unwrap().len(), 3);
    assert_eq!(window(&rec(100), 256, 256).unwrap().len(), 0);
}

#[test]
fn windows_inherit_metadata_and_skip_short_records() {
    let mk = |file: &str, subj: &str, n: usize, label: usize| Record {
        meta: RecordMeta { label: Some(label), ..meta(file, subj, n) },
        data: Tensor::new(&[1, n], (0..n).map(|i| i as f32).collect()).unwrap(),
    };
    let recs = vec![mk("a", "s1", 70, 1), mk("b", "s2", 10, 0), mk("c", "s3", 32, 0)];
    let b = window_records(&recs, 32, 32).unwrap();
    assert_eq!(b.len(), 3);
    assert_eq!(b.subjects, ["s1", "s1", "s3"]);
    assert_eq!(b.y.as_deref(), Some(&[1, 1, 0][..]));
    assert_eq!(b.records, [0, 0, 2]);
    assert_eq!(b.x.data()[32], 32.0);
}

proptest! {
    #[test]
    fn windowing_never_fabricates_samples(n in 1usize..2000, wl in 1usize..300, stride in 1usize..300) {
        let x = Tensor::<f32>::zeros(&[1, n]).unwrap();
        let w = window(&x, wl, stride).unwrap();
        prop_assert!(w.len() * wl <= n || stride < wl);
        let covered: HashSet<usize> = (0..w.len()).flat_map(|i| i * stride..i * stride + wl).collect();
        prop_assert!(covered.iter().all(|&t| t < n));
    }
}

#[test]
fn splits_are_subject_disjoint_for_100_seeds() {
    let metas: Vec<RecordMeta> = (0..37).map(|i| meta(&format!("r{i}"), &format!("s{}", i % 13), 100 + 17 * (i % 5))).collect();
    for seed in 0..100 {
        let s = subject_split(&metas, [0.8, 0.1, 0.1], seed).unwrap();
        let sets: Vec<HashSet<&str>> = [&s.train, &s.val, &s.test]
            .iter()
            .map(|idx| idx.iter().map(|&i| metas[i].subject_id.as_str()).collect())
            .collect();
        assert!(sets[0].is_disjoint(&sets[1]) && sets[0].is_disjoint(&sets[2]) && sets[1].is_disjoint(&sets[2]));
        assert_eq!(s.train.len() + s.val.len() + s.test.len(), metas.len());
        assert!(sets.iter().all(|x| !x.is_empty()));
        assert_eq!(s.train, subject_split(&metas, [0.8, 0.1, 0.1], seed).unwrap().train);
    }
}

#[test]
fn equal_subjects_split_eight_one_one() {
    let metas: Vec<RecordMeta> = (0..10).map(|i| meta(&format!("r{i}"), &format!("s{i}"), 500)).collect();
    for seed in 0..10 {
        let s = subject_split(&metas, [0.8, 0.1, 0.1], seed).unwrap();
        assert_eq!([s.train.len(), s.val.len(), s.test.len()], [8, 1, 1]);
    }
    assert!(subject_split(&metas[..2], [0.8, 0.1, 0.1], 0).is_err());
}

/// Mean 8-12 Hz power over channels of one window, by direct DFT.
fn alpha_power(x: &[f32], channels: usize, fs: f64) -> f64 {
    let t = x.len() / channels;
    let mut total = 0.0;
    for ch in 0..channels {
        let s = &x[ch * t..(ch + 1) * t];
        for k in 1..t / 2 {
            let f = k as f64 * fs / t as f64;
            if f < ALPHA_BAND.0 || f > ALPHA_BAND.1 {
                continue;
            }
            let (mut re, mut im) = (0.0, 0.0);
            for (n, &v) in s.iter().enumerate() {
                let w = -2.0 * std::f64::consts::PI * (k * n) as f64 / t as f64;
                re += f64::from(v) * w.cos();
                im += f64::from(v) * w.sin();
            }
            total += (re * re + im * im) / (t * t) as f64;
        }
    }
    total / channels as f64
}

#[test]
fn class_one_carries_more_alpha_power_on_1000_windows() {
    let cfg = SynthConfig { n_subjects: 50, channels: 4, ..SynthConfig::default() };
    let ds = synth_generate(&cfg).unwrap();
    let b = window_records(&ds.records(), cfg.window_len, cfg.window_len).unwrap();
    assert_eq!(b.len(), 1000);
    let per = cfg.channels * cfg.window_len;
    let mut sums = [0.0; 2];
    let mut counts = [0usize; 2];
    for i in 0..b.len() {
        let label = b.y.as_ref().unwrap()[i];
        sums[label] += alpha_power(&b.x.data()[i * per..(i + 1) * per], cfg.channels, cfg.sampling_rate_hz);
        counts[label] += 1;
    }
    assert_eq!(counts, [500, 500]);
    assert!(sums[1] / 500.0 > 2.0 * sums[0] / 500.0, "{sums:?}");
}

#[test]
fn band_power_is_stationary_within_subject_and_class() {
    let cfg = SynthConfig { n_subjects: 4, windows_per_subject: 40, channels: 3, ..SynthConfig::default() };
    let ds = synth_generate(&cfg).unwrap();
    let per = cfg.channels * cfg.window_len;
    for rec in ds.records() {
        let b = window_records(std::slice::from_ref(&rec), cfg.window_len, cfg.window_len).unwrap();
        let p: Vec<f64> = (0..b.len()).map(|i| alpha_power(&b.x.data()[i * per..(i + 1) * per], cfg.channels, cfg.sampling_rate_hz)).collect();
        let (first, second) = p.split_at(p.len() / 2);
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        let var = |v: &[f64]| {
            let m = mean(v);
            v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64
        };
        let se = (var(first) / first.len() as f64 + var(second) / second.len() as f64).sqrt();
        assert!((mean(first) - mean(second)).abs() < 3.0 * se, "{}: drift beyond 3 sigma", rec.meta.file);
    }
}

#[test]
fn generator_is_deterministic_and_checks_nyquist() {
    let cfg = SynthConfig { n_subjects: 3, windows_per_subject: 2, ..SynthConfig::default() };
    let a = synth_generate(&cfg).unwrap();
    let b = synth_generate(&cfg).unwrap();
    assert_eq!(a.payloads, b.payloads);
    assert_eq!(a.manifest, b.manifest);
    assert_ne!(synth_generate(&SynthConfig { seed: 1, ..cfg.clone() }).unwrap().payloads, a.payloads);
    assert!(synth_generate(&SynthConfig { sampling_rate_hz: 20.0, ..cfg.clone() }).is_err());
    let null = synth_generate(&SynthConfig { amplitude: 0.0, ..cfg }).unwrap();
    assert_eq!(null.payloads.len(), 6);
}
