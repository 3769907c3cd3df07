use diffcore::{Real, Tensor};

use crate::data::manifest::Record;
use crate::error::{Error, Result};

/// Windows stacked as `x: [B, C, T]` with per-row metadata.
#[derive(Debug, Clone)]
pub struct SignalBatch {
    pub x: Tensor<f32>,
    pub y: Option<Vec<usize>>,
    pub subjects: Vec<String>,
    /// index of the source record for each row
    pub records: Vec<usize>,
}

impl SignalBatch {
    pub fn len(&self) -> usize {
        self.subjects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subjects.is_empty()
    }

    pub fn channels(&self) -> usize {
        self.x.shape()[1]
    }

    pub fn seq_len(&self) -> usize {
        self.x.shape()[2]
    }

    pub fn labels(&self) -> Result<&[usize]> {
        self.y.as_deref().ok_or_else(|| Error::Invalid("batch carries no labels".into()))
    }

    /// Rows at `idx`, in that order.
    pub fn select(&self, idx: &[usize]) -> Result<SignalBatch> {
        let (c, t) = (self.channels(), self.seq_len());
        let row = c * t;
        let mut data = Vec::with_capacity(idx.len() * row);
        for &i in idx {
            if i >= self.len() {
                return Err(Error::Invalid(format!("row {i} out of range for {} rows", self.len())));
            }
            data.extend_from_slice(&self.x.data()[i * row..(i + 1) * row]);
        }
        Ok(SignalBatch {
            x: Tensor::new(&[idx.len(), c, t], data)?,
            y: self.y.as_ref().map(|y| idx.iter().map(|&i| y[i]).collect()),
            subjects: idx.iter().map(|&i| self.subjects[i].clone()).collect(),
            records: idx.iter().map(|&i| self.records[i]).collect(),
        })
    }

    /// Rows whose source record is in `records`.
    pub fn from_records(&self, records: &[usize]) -> Result<SignalBatch> {
        let idx: Vec<usize> = (0..self.len()).filter(|&i| records.contains(&self.records[i])).collect();
        self.select(&idx)
    }

    pub fn x_as<R: Real>(&self) -> Result<Tensor<R>> {
        Ok(self.x.cast()?)
    }
}

/// Cuts `[C, n]` into `[C, window_len]` pieces starting every `stride`
/// samples; the trailing remainder is dropped.
pub fn window(data: &Tensor<f32>, window_len: usize, stride: usize) -> Result<Vec<Tensor<f32>>> {
    if window_len == 0 || stride == 0 {
        return Err(Error::Invalid("window length and stride must be positive".into()));
    }
    let &[c, n] = data.shape() else {
        return Err(Error::Invalid(format!("record must be [C, n], got {:?}", data.shape())));
    };
    if window_len > n {
        return Ok(Vec::new());
    }
    let count = (n - window_len) / stride + 1;
    let mut out = Vec::with_capacity(count);
    for w in 0..count {
        let start = w * stride;
        let mut v = Vec::with_capacity(c * window_len);
        for ch in 0..c {
            v.extend_from_slice(&data.data()[ch * n + start..ch * n + start + window_len]);
        }
        out.push(Tensor::new(&[c, window_len], v)?);
    }
    Ok(out)
}

/// Windows every record into one batch. Records shorter than `window_len`
/// are skipped with a warning. Labels are kept only if every record has one.
pub fn window_records(records: &[Record], window_len: usize, stride: usize) -> Result<SignalBatch> {
    let channels = records.first().map(|r| r.data.shape()[0]).unwrap_or(0);
    let all_labeled = !records.is_empty() && records.iter().all(|r| r.meta.label.is_some());
    let mut data = Vec::new();
    let (mut y, mut subjects, mut rec_idx) = (Vec::new(), Vec::new(), Vec::new());
    for (ri, rec) in records.iter().enumerate() {
        if rec.data.shape()[0] != channels {
            return Err(Error::Record { record: rec.meta.file.clone(), msg: "channel count differs from other records".into() });
        }
        if window_len > rec.meta.n_samples {
            log::warn!("record `{}`: {} samples is shorter than window {window_len}; skipped", rec.meta.file, rec.meta.n_samples);
            continue;
        }
        for w in window(&rec.data, window_len, stride)? {
            data.extend_from_slice(w.data());
            subjects.push(rec.meta.subject_id.clone());
            rec_idx.push(ri);
            if let Some(l) = rec.meta.label {
                y.push(l);
            }
        }
    }
    Ok(SignalBatch {
        x: Tensor::new(&[subjects.len(), channels, window_len], data)?,
        y: all_labeled.then_some(y),
        subjects,
        records: rec_idx,
    })
}
