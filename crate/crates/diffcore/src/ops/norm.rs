use crate::error::{shape_err, Result};
use crate::ops::split_last;
use crate::real::Real;
use crate::tape::{Tape, Var};
use crate::tensor::{Buffer, Tensor};

fn check<R: Real>(x: &Tensor<R>, gamma: &Tensor<R>, beta: &Tensor<R>) -> Result<(usize, usize)> {
    let (rows, d) = split_last("layernorm", x.shape())?;
    if d == 0 {
        return shape_err("layernorm", "trailing dim must be at least 1");
    }
    if gamma.shape() != [d] || beta.shape() != [d] {
        return shape_err(
            "layernorm",
            format!("affine shapes {:?}/{:?} for width {d}", gamma.shape(), beta.shape()),
        );
    }
    Ok((rows, d))
}

/// Normalized values and per-row reciprocal std.
fn normalize<R: Real>(x: &[R], rows: usize, d: usize, eps: R) -> (Vec<R>, Vec<R>) {
    let inv_d = R::one() / R::of_usize(d);
    let mut xhat = vec![R::zero(); rows * d];
    let mut rstd = vec![R::zero(); rows];
    for r in 0..rows {
        let row = &x[r * d..(r + 1) * d];
        let mean = row.iter().copied().sum::<R>() * inv_d;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<R>() * inv_d;
        let s = R::one() / (var + eps).sqrt();
        // zero variance with eps = 0 would divide by zero; the centered row is
        // all zeros then, so any finite scale gives the same output
        let s = if s.is_finite() { s } else { R::zero() };
        rstd[r] = s;
        for (o, &v) in xhat[r * d..(r + 1) * d].iter_mut().zip(row) {
            *o = (v - mean) * s;
        }
    }
    (xhat, rstd)
}

/// Per-position normalization over the trailing dim with population variance.
pub fn layernorm<R: Real>(x: &Tensor<R>, gamma: &Tensor<R>, beta: &Tensor<R>, eps: R) -> Result<Tensor<R>> {
    let (rows, d) = check(x, gamma, beta)?;
    let (xhat, _) = normalize(x.data(), rows, d, eps);
    let mut out = Buffer::zeros(rows * d)?;
    for (orow, hrow) in out.as_mut_slice().chunks_mut(d).zip(xhat.chunks(d)) {
        for j in 0..d {
            orow[j] = hrow[j] * gamma.data()[j] + beta.data()[j];
        }
    }
    Tensor::from_buffer(x.shape(), out)
}

impl<R: Real> Tape<R> {
    pub fn layernorm(&self, x: &Var<R>, gamma: &Var<R>, beta: &Var<R>, eps: R) -> Result<Var<R>> {
        let (rows, d) = check(x.value(), gamma.value(), beta.value())?;
        let y = layernorm(x.value(), gamma.value(), beta.value(), eps)?;
        let xv = x.value().clone();
        let gv = gamma.value().clone();
        Ok(self.record(&[x, gamma, beta], y, move |g| {
            let (xhat, rstd) = normalize(xv.data(), rows, d, eps);
            let inv_d = R::one() / R::of_usize(d);
            let mut gx = Buffer::zeros(rows * d)?;
            let mut ggamma = vec![R::zero(); d];
            let mut gbeta = vec![R::zero(); d];
            let mut gh = vec![R::zero(); d];
            for r in 0..rows {
                let grow = &g.data()[r * d..(r + 1) * d];
                let hrow = &xhat[r * d..(r + 1) * d];
                for j in 0..d {
                    gh[j] = grow[j] * gv.data()[j];
                    ggamma[j] += grow[j] * hrow[j];
                    gbeta[j] += grow[j];
                }
                let mean_gh = gh.iter().copied().sum::<R>() * inv_d;
                let mean_ghh = gh.iter().zip(hrow).map(|(&a, &b)| a * b).sum::<R>() * inv_d;
                for j in 0..d {
                    gx.as_mut_slice()[r * d + j] = rstd[r] * (gh[j] - mean_gh - hrow[j] * mean_ghh);
                }
            }
            Ok(vec![
                Some(Tensor::from_buffer(xv.shape(), gx)?),
                Some(Tensor::new(&[d], ggamma)?),
                Some(Tensor::new(&[d], gbeta)?),
            ])
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ones(d: usize) -> Tensor<f64> {
        Tensor::ones(&[d]).unwrap()
    }

    #[test]
    fn two_point_example() {
        let x = Tensor::new(&[2], vec![1.0, 3.0]).unwrap();
        let y = layernorm(&x, &ones(2), &Tensor::zeros(&[2]).unwrap(), 0.0).unwrap();
        assert_eq!(y.data(), &[-1.0, 1.0]);
    }

    #[test]
    fn constant_row_maps_to_zero() {
        let x = Tensor::new(&[1, 4], vec![7.0; 4]).unwrap();
        let z = Tensor::zeros(&[4]).unwrap();
        assert_eq!(layernorm(&x, &ones(4), &z, 1e-5).unwrap().data(), &[0.0; 4]);
        assert_eq!(layernorm(&x, &ones(4), &z, 0.0).unwrap().data(), &[0.0; 4]);
    }

    #[test]
    fn zero_gamma_gives_beta() {
        let x = Tensor::new(&[2, 3], vec![1.0, -4.0, 2.0, 0.5, 9.0, 3.0]).unwrap();
        let beta = Tensor::full(&[3], 2.5).unwrap();
        let y = layernorm(&x, &Tensor::zeros(&[3]).unwrap(), &beta, 1e-5).unwrap();
        assert!(y.data().iter().all(|&v| v == 2.5));
    }
}
