use diffcore::gemm::{gemm, MatMut, MatRef};
use diffcore::{Buffer, Real, Tape, Tensor, Var};

use crate::error::{Error, Result};
use crate::params::{Bound, Init, LayerNorm, Linear};

/// Row-wise softmax of `len × len` blocks, in place.
fn softmax_rows<R: Real>(s: &mut [R], len: usize) {
    for row in s.chunks_mut(len) {
        let m = row.iter().copied().fold(R::neg_infinity(), R::max);
        let mut z = R::zero();
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            z += *v;
        }
        let inv = R::one() / z;
        for v in row.iter_mut() {
            *v *= inv;
        }
    }
}

/// Multi-head scaled dot-product self-attention over packed `qkv` [B, T, 3d].
///
/// Scores and probabilities are materialized as full [H, T, T] tensors per
/// batch item, so memory grows quadratically with `T` by design.
pub fn attention<R: Real>(tape: &Tape<R>, qkv: &Var<R>, heads: usize) -> Result<Var<R>> {
    let shape = qkv.shape().to_vec();
    if shape.len() != 3 || heads == 0 || shape[2] % (3 * heads) != 0 {
        return Err(Error::Invalid(format!(
            "attention expects [B, T, 3·d] with d divisible by {heads} heads, got {shape:?}"
        )));
    }
    let (nb, t, d) = (shape[0], shape[1], shape[2] / 3);
    let hd = d / heads;
    let scale = R::one() / R::of_usize(hd).sqrt();
    let recording = tape.is_recording() && qkv.tracked();
    let src = qkv.value().clone();
    let mut out = Buffer::zeros(nb * t * d)?;
    let mut saved = Vec::new();
    let stride = 3 * d;
    for b in 0..nb {
        let base = b * t * stride;
        let mut scores = Buffer::<R>::zeros(heads * t * t)?;
        for h in 0..heads {
            let q = MatRef::new(src.data(), base + h * hd, t, hd, stride, 1);
            let k = MatRef::new(src.data(), base + d + h * hd, t, hd, stride, 1);
            gemm(scale, q, k.t(), R::zero(), MatMut::dense(scores.as_mut_slice(), h * t * t, t, t));
        }
        let mut probs = Buffer::<R>::from_vec(scores.as_slice().to_vec())?;
        drop(scores);
        softmax_rows(probs.as_mut_slice(), t);
        for h in 0..heads {
            let v = MatRef::new(src.data(), base + 2 * d + h * hd, t, hd, stride, 1);
            gemm(
                R::one(),
                MatRef::dense(probs.as_slice(), h * t * t, t, t),
                v,
                R::zero(),
                MatMut::new(out.as_mut_slice(), b * t * d + h * hd, t, hd, d, 1),
            );
        }
        if recording {
            saved.push(probs);
        }
    }
    let y = Tensor::from_buffer(&[nb, t, d], out)?;
    if !recording {
        return Ok(tape.constant(y));
    }
    Ok(tape.record(&[qkv], y, move |g| {
        let mut gq = Buffer::zeros(src.len())?;
        let mut dp = vec![R::zero(); t * t];
        for (b, probs) in saved.iter().enumerate() {
            let base = b * t * stride;
            for h in 0..heads {
                let p = MatRef::dense(probs.as_slice(), h * t * t, t, t);
                let go = MatRef::new(g.data(), b * t * d + h * hd, t, hd, d, 1);
                let q = MatRef::new(src.data(), base + h * hd, t, hd, stride, 1);
                let k = MatRef::new(src.data(), base + d + h * hd, t, hd, stride, 1);
                let v = MatRef::new(src.data(), base + 2 * d + h * hd, t, hd, stride, 1);
                gemm(R::one(), go, v.t(), R::zero(), MatMut::dense(&mut dp, 0, t, t));
                gemm(
                    R::one(),
                    p.t(),
                    go,
                    R::zero(),
                    MatMut::new(gq.as_mut_slice(), base + 2 * d + h * hd, t, hd, stride, 1),
                );
                let pr = &probs.as_slice()[h * t * t..(h + 1) * t * t];
                for (drow, prow) in dp.chunks_mut(t).zip(pr.chunks(t)) {
                    let dot: R = drow.iter().zip(prow).map(|(&a, &b)| a * b).sum();
                    for (dv, &pv) in drow.iter_mut().zip(prow) {
                        *dv = pv * (*dv - dot);
                    }
                }
                let ds = MatRef::dense(&dp, 0, t, t);
                gemm(scale, ds, k, R::zero(), MatMut::new(gq.as_mut_slice(), base + h * hd, t, hd, stride, 1));
                gemm(
                    scale,
                    ds.t(),
                    q,
                    R::zero(),
                    MatMut::new(gq.as_mut_slice(), base + d + h * hd, t, hd, stride, 1),
                );
            }
        }
        Ok(vec![Some(Tensor::from_buffer(src.shape(), gq)?)])
    }))
}

/// Pre-norm transformer block (attention + feed-forward, both residual) on [B, C, T].
#[derive(Debug, Clone)]
pub struct AttentionBlock {
    pub d_model: usize,
    pub heads: usize,
    pub norm1: LayerNorm,
    pub qkv: Linear,
    pub out: Linear,
    pub norm2: LayerNorm,
    pub ff1: Linear,
    pub ff2: Linear,
}

impl AttentionBlock {
    pub fn new<R: Real>(init: &mut Init<'_, R>, name: &str, d_model: usize, heads: usize, d_ff: usize) -> Result<Self> {
        if heads == 0 || d_model % heads != 0 {
            return Err(Error::Config(format!("d_model {d_model} not divisible by {heads} heads")));
        }
        Ok(AttentionBlock {
            d_model,
            heads,
            norm1: LayerNorm::new(init, &format!("{name}.norm1"), d_model)?,
            qkv: Linear::new(init, &format!("{name}.qkv"), d_model, 3 * d_model, true)?,
            out: Linear::new(init, &format!("{name}.out"), d_model, d_model, true)?,
            norm2: LayerNorm::new(init, &format!("{name}.norm2"), d_model)?,
            ff1: Linear::new(init, &format!("{name}.ff1"), d_model, d_ff, true)?,
            ff2: Linear::new(init, &format!("{name}.ff2"), d_ff, d_model, true)?,
        })
    }

    pub fn param_count(&self) -> usize {
        self.norm1.param_count()
            + self.qkv.param_count()
            + self.out.param_count()
            + self.norm2.param_count()
            + self.ff1.param_count()
            + self.ff2.param_count()
    }

    pub fn forward<R: Real>(&self, tape: &Tape<R>, p: &Bound<R>, x: &Var<R>) -> Result<Var<R>> {
        if x.shape().len() != 3 || x.shape()[1] != self.d_model {
            return Err(Error::Invalid(format!(
                "attention block expects [B, {}, T], got {:?}",
                self.d_model,
                x.shape()
            )));
        }
        let xt = tape.transpose_last_two(x)?;
        let h = self.norm1.forward(tape, p, &xt)?;
        let qkv = self.qkv.forward(tape, p, &h)?;
        let a = attention(tape, &qkv, self.heads)?;
        let x1 = tape.add(&xt, &self.out.forward(tape, p, &a)?)?;
        let h2 = self.norm2.forward(tape, p, &x1)?;
        let f = self.ff2.forward(tape, p, &tape.silu(&self.ff1.forward(tape, p, &h2)?)?)?;
        let x2 = tape.add(&x1, &f)?;
        Ok(tape.transpose_last_two(&x2)?)
    }
}
