use crate::error::{shape_err, Result};
use crate::gemm::{gemm, MatMut, MatRef};
use crate::ops::expect_rank;
use crate::real::Real;
use crate::tape::{Tape, Var};
use crate::tensor::{Buffer, Tensor};

struct Dims {
    b: usize,
    cin: usize,
    cout: usize,
    t: usize,
    k: usize,
}

fn check(x: &Tensor<impl Real>, w: &Tensor<impl Real>, bias: &Tensor<impl Real>) -> Result<Dims> {
    expect_rank("conv1d", x.shape(), 3)?;
    expect_rank("conv1d", w.shape(), 3)?;
    let (b, cin, t) = (x.dim(0), x.dim(1), x.dim(2));
    let (cout, wcin, k) = (w.dim(0), w.dim(1), w.dim(2));
    if wcin != cin {
        return shape_err(
            "conv1d",
            format!("input has {cin} channels but weight {:?} expects {wcin}", w.shape()),
        );
    }
    if k % 2 == 0 {
        return shape_err("conv1d", format!("kernel size {k} must be odd for same padding"));
    }
    if bias.shape() != [cout] {
        return shape_err(
            "conv1d",
            format!("bias shape {:?} does not match {cout} output channels", bias.shape()),
        );
    }
    Ok(Dims { b, cin, cout, t, k })
}

/// Output columns `[lo, hi)` that read input column `t + s` for tap shift `s`.
fn span(t: usize, s: isize) -> (usize, usize) {
    let lo = (-s).max(0) as usize;
    let hi = (t as isize - s.max(0)).max(0) as usize;
    (lo.min(t), hi.max(lo.min(t)))
}

/// Same-padded 1-D cross-correlation: `y[b,o,t] = bias[o] + Σ_{i,k} w[o,i,k] x[b,i,t+k-K/2]`.
pub fn conv1d<R: Real>(x: &Tensor<R>, w: &Tensor<R>, bias: &Tensor<R>) -> Result<Tensor<R>> {
    let d = check(x, w, bias)?;
    let mut out = Buffer::zeros(d.b * d.cout * d.t)?;
    let y = out.as_mut_slice();
    for bi in 0..d.b {
        let ybase = bi * d.cout * d.t;
        for o in 0..d.cout {
            y[ybase + o * d.t..ybase + (o + 1) * d.t].fill(bias.data()[o]);
        }
        for kk in 0..d.k {
            let s = kk as isize - (d.k / 2) as isize;
            let (lo, hi) = span(d.t, s);
            if lo >= hi {
                continue;
            }
            let n = hi - lo;
            let wk = MatRef::new(w.data(), kk, d.cout, d.cin, d.cin * d.k, d.k);
            let xs = MatRef::new(
                x.data(),
                bi * d.cin * d.t + (lo as isize + s) as usize,
                d.cin,
                n,
                d.t,
                1,
            );
            let yv = MatMut::new(y, ybase + lo, d.cout, n, d.t, 1);
            gemm(R::one(), wk, xs, R::one(), yv);
        }
    }
    Tensor::from_buffer(&[d.b, d.cout, d.t], out)
}

impl<R: Real> Tape<R> {
    pub fn conv1d(&self, x: &Var<R>, w: &Var<R>, bias: &Var<R>) -> Result<Var<R>> {
        let y = conv1d(x.value(), w.value(), bias.value())?;
        let d = check(x.value(), w.value(), bias.value())?;
        let (xv, wv) = (x.value().clone(), w.value().clone());
        let (need_x, need_w) = (x.tracked(), w.tracked());
        Ok(self.record(&[x, w, bias], y, move |g| {
            let gd = g.data();
            let mut gx = if need_x { Some(Buffer::zeros(xv.len())?) } else { None };
            let mut gw = if need_w { Some(Buffer::zeros(wv.len())?) } else { None };
            let mut gb = vec![R::zero(); d.cout];
            for bi in 0..d.b {
                let gbase = bi * d.cout * d.t;
                for (o, acc) in gb.iter_mut().enumerate() {
                    *acc += gd[gbase + o * d.t..gbase + (o + 1) * d.t].iter().copied().sum::<R>();
                }
                for kk in 0..d.k {
                    let s = kk as isize - (d.k / 2) as isize;
                    let (lo, hi) = span(d.t, s);
                    if lo >= hi {
                        continue;
                    }
                    let n = hi - lo;
                    let xoff = bi * d.cin * d.t + (lo as isize + s) as usize;
                    let gy = MatRef::new(gd, gbase + lo, d.cout, n, d.t, 1);
                    if let Some(gx) = gx.as_mut() {
                        let wk = MatRef::new(wv.data(), kk, d.cout, d.cin, d.cin * d.k, d.k);
                        let dst = MatMut::new(gx.as_mut_slice(), xoff, d.cin, n, d.t, 1);
                        gemm(R::one(), wk.t(), gy, R::one(), dst);
                    }
                    if let Some(gw) = gw.as_mut() {
                        let xs = MatRef::new(xv.data(), xoff, d.cin, n, d.t, 1);
                        let dst = MatMut::new(gw.as_mut_slice(), kk, d.cout, d.cin, d.cin * d.k, d.k);
                        gemm(R::one(), gy, xs.t(), R::one(), dst);
                    }
                }
            }
            Ok(vec![
                gx.map(|b| Tensor::from_buffer(xv.shape(), b)).transpose()?,
                gw.map(|b| Tensor::from_buffer(wv.shape(), b)).transpose()?,
                Some(Tensor::new(&[d.cout], gb)?),
            ])
        }))
    }
}
