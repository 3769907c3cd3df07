use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::manifest::RecordMeta;
use crate::error::{Error, Result};

/// Record indices per split, plus the subjects each split owns.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
    pub subjects: [Vec<String>; 3],
}

/// Subject-disjoint partition approximating `fractions` (train, val, test)
/// by sample count. Subjects are shuffled by `seed`; the first three seed
/// one split each, the rest go greedily to the split furthest below its
/// target.
pub fn subject_split(records: &[RecordMeta], fractions: [f64; 3], seed: u64) -> Result<Split> {
    if fractions.iter().any(|f| !(f.is_finite() && *f > 0.0)) || (fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::Invalid(format!("split fractions {fractions:?} must be positive and sum to 1")));
    }
    let mut sizes: BTreeMap<&str, usize> = BTreeMap::new();
    for r in records {
        *sizes.entry(r.subject_id.as_str()).or_default() += r.n_samples;
    }
    if sizes.len() < 3 {
        return Err(Error::Invalid(format!("subject split needs at least 3 subjects, found {}", sizes.len())));
    }
    let mut subjects: Vec<(&str, usize)> = sizes.into_iter().collect();
    subjects.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let total: usize = subjects.iter().map(|s| s.1).sum();
    let target = fractions.map(|f| f * total as f64);
    let mut filled = [0usize; 3];
    let mut owner: BTreeMap<&str, usize> = BTreeMap::new();
    for (i, &(s, n)) in subjects.iter().enumerate() {
        let k = if i < 3 {
            i
        } else {
            // largest remaining deficit; earlier split wins ties
            (0..3).fold(0, |best, k| if target[k] - filled[k] as f64 > target[best] - filled[best] as f64 { k } else { best })
        };
        filled[k] += n;
        owner.insert(s, k);
    }
    let mut split = Split { train: Vec::new(), val: Vec::new(), test: Vec::new(), subjects: Default::default() };
    for (i, r) in records.iter().enumerate() {
        match owner[r.subject_id.as_str()] {
            0 => split.train.push(i),
            1 => split.val.push(i),
            _ => split.test.push(i),
        }
    }
    for &(s, _) in &subjects {
        split.subjects[owner[s]].push(s.to_string());
    }
    for list in &mut split.subjects {
        list.sort();
    }
    Ok(split)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn meta(subject: usize) -> RecordMeta {
        RecordMeta {
            file: format!("{subject}.bin"),
            subject_id: format!("s{subject}"),
            label: None,
            n_samples: 100,
            channels: None,
            sampling_rate_hz: None,
        }
    }

    #[test]
    fn equal_subjects_split_eight_one_one() {
        let recs: Vec<_> = (0..10).map(meta).collect();
        let s = subject_split(&recs, [0.8, 0.1, 0.1], 3).unwrap();
        assert_eq!([s.train.len(), s.val.len(), s.test.len()], [8, 1, 1]);
    }

    #[test]
    fn too_few_subjects() {
        let recs: Vec<_> = (0..2).map(meta).collect();
        assert!(subject_split(&recs, [0.8, 0.1, 0.1], 0).is_err());
    }
}
