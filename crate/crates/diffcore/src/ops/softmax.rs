use crate::error::{shape_err, Result};
use crate::ops::{expect_rank, split_last};
use crate::real::Real;
use crate::tape::{Tape, Var};
use crate::tensor::{Buffer, Tensor};

/// Row-wise log-softmax over the trailing axis.
pub fn log_softmax<R: Real>(x: &Tensor<R>) -> Result<Tensor<R>> {
    let (_, k) = split_last("log_softmax", x.shape())?;
    if k == 0 {
        return shape_err("log_softmax", "empty class axis");
    }
    let mut out = Buffer::zeros(x.len())?;
    for (orow, row) in out.as_mut_slice().chunks_mut(k).zip(x.data().chunks(k)) {
        let m = row.iter().copied().fold(R::neg_infinity(), R::max);
        let lse = m + row.iter().map(|&v| (v - m).exp()).sum::<R>().ln();
        for (o, &v) in orow.iter_mut().zip(row) {
            *o = v - lse;
        }
    }
    Tensor::from_buffer(x.shape(), out)
}

impl<R: Real> Tape<R> {
    /// Mean cross-entropy of `logits` [N, K] against class indices.
    pub fn cross_entropy(&self, logits: &Var<R>, labels: &[usize]) -> Result<Var<R>> {
        expect_rank("cross_entropy", logits.shape(), 2)?;
        let (n, k) = (logits.shape()[0], logits.shape()[1]);
        if labels.len() != n || n == 0 {
            return shape_err("cross_entropy", format!("{} labels for {n} rows", labels.len()));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
            return shape_err("cross_entropy", format!("label {bad} outside {k} classes"));
        }
        let lp = log_softmax(logits.value())?;
        let inv_n = R::one() / R::of_usize(n);
        let loss = -labels
            .iter()
            .enumerate()
            .map(|(i, &l)| lp.data()[i * k + l])
            .sum::<R>()
            * inv_n;
        let labels = labels.to_vec();
        Ok(self.record(&[logits], Tensor::scalar(loss)?, move |g| {
            let scale = g.data()[0] * inv_n;
            let mut gl = Buffer::zeros(n * k)?;
            for i in 0..n {
                for j in 0..k {
                    let p = lp.data()[i * k + j].exp();
                    let onehot = if j == labels[i] { R::one() } else { R::zero() };
                    gl.as_mut_slice()[i * k + j] = scale * (p - onehot);
                }
            }
            Ok(vec![Some(Tensor::from_buffer(&[n, k], gl)?)])
        }))
    }
}
