use crate::error::{shape_err, Result};
use crate::gemm::{gemm, MatMut, MatRef};
use crate::ops::{expect_rank, split_last};
use crate::real::Real;
use crate::tape::{Tape, Var};
use crate::tensor::{Buffer, Tensor};

fn check<R: Real>(x: &Tensor<R>, w: &Tensor<R>, b: Option<&Tensor<R>>) -> Result<(usize, usize, usize)> {
    let (rows, din) = split_last("linear", x.shape())?;
    expect_rank("linear", w.shape(), 2)?;
    let dout = w.dim(0);
    if w.dim(1) != din {
        return shape_err(
            "linear",
            format!("trailing dim {din} does not match weight {:?}", w.shape()),
        );
    }
    if let Some(b) = b {
        if b.shape() != [dout] {
            return shape_err("linear", format!("bias {:?} for {dout} outputs", b.shape()));
        }
    }
    Ok((rows, din, dout))
}

fn out_shape(x: &[usize], dout: usize) -> Vec<usize> {
    let mut s = x.to_vec();
    *s.last_mut().unwrap() = dout;
    s
}

/// `y = x Wᵀ + b` along the trailing dim; `b` is optional.
pub fn linear<R: Real>(x: &Tensor<R>, w: &Tensor<R>, b: Option<&Tensor<R>>) -> Result<Tensor<R>> {
    let (rows, din, dout) = check(x, w, b)?;
    let mut out = Buffer::zeros(rows * dout)?;
    if let Some(b) = b {
        for row in out.as_mut_slice().chunks_mut(dout) {
            row.copy_from_slice(b.data());
        }
    }
    let beta = if b.is_some() { R::one() } else { R::zero() };
    gemm(
        R::one(),
        MatRef::dense(x.data(), 0, rows, din),
        MatRef::dense(w.data(), 0, dout, din).t(),
        beta,
        MatMut::dense(out.as_mut_slice(), 0, rows, dout),
    );
    Tensor::from_buffer(&out_shape(x.shape(), dout), out)
}

impl<R: Real> Tape<R> {
    pub fn linear(&self, x: &Var<R>, w: &Var<R>, b: Option<&Var<R>>) -> Result<Var<R>> {
        let (rows, din, dout) = check(x.value(), w.value(), b.map(|b| b.value()))?;
        let y = linear(x.value(), w.value(), b.map(|b| b.value()))?;
        let (xv, wv) = (x.value().clone(), w.value().clone());
        let has_bias = b.is_some();
        let mut inputs = vec![x, w];
        inputs.extend(b);
        let need_x = x.tracked();
        Ok(self.record(&inputs, y, move |g| {
            let gy = MatRef::dense(g.data(), 0, rows, dout);
            let gx = if need_x {
                let mut buf = Buffer::zeros(rows * din)?;
                gemm(
                    R::one(),
                    gy,
                    MatRef::dense(wv.data(), 0, dout, din),
                    R::zero(),
                    MatMut::dense(buf.as_mut_slice(), 0, rows, din),
                );
                Some(Tensor::from_buffer(xv.shape(), buf)?)
            } else {
                None
            };
            let mut gw = Buffer::zeros(dout * din)?;
            gemm(
                R::one(),
                gy.t(),
                MatRef::dense(xv.data(), 0, rows, din),
                R::zero(),
                MatMut::dense(gw.as_mut_slice(), 0, dout, din),
            );
            let mut grads = vec![gx, Some(Tensor::from_buffer(&[dout, din], gw)?)];
            if has_bias {
                let mut gb = vec![R::zero(); dout];
                for row in g.data().chunks(dout) {
                    for (a, &v) in gb.iter_mut().zip(row) {
                        *a += v;
                    }
                }
                grads.push(Some(Tensor::new(&[dout], gb)?));
            }
            Ok(grads)
        }))
    }
}
