use crate::error::{shape_err, Result};
use crate::ops::expect_rank;
use crate::real::Real;
use crate::tape::{Tape, Var};
use crate::tensor::{Buffer, Tensor};

fn forward<R: Real>(x: &Tensor<R>, k: usize, stride: usize) -> Result<(Tensor<R>, Vec<usize>)> {
    expect_rank("max_pool1d", x.shape(), 3)?;
    let t = x.dim(2);
    if k == 0 || stride == 0 {
        return shape_err("max_pool1d", "kernel and stride must be positive");
    }
    if t < k {
        return shape_err("max_pool1d", format!("length {t} shorter than window {k}"));
    }
    let tout = (t - k) / stride + 1;
    let rows = x.dim(0) * x.dim(1);
    let mut out = Buffer::zeros(rows * tout)?;
    let mut arg = vec![0usize; rows * tout];
    for r in 0..rows {
        let row = &x.data()[r * t..(r + 1) * t];
        for j in 0..tout {
            let start = j * stride;
            let mut best = start;
            for i in start + 1..start + k {
                // strict comparison keeps the earliest index on ties
                if row[i] > row[best] {
                    best = i;
                }
            }
            out.as_mut_slice()[r * tout + j] = row[best];
            arg[r * tout + j] = r * t + best;
        }
    }
    Ok((Tensor::from_buffer(&[x.dim(0), x.dim(1), tout], out)?, arg))
}

pub fn max_pool1d<R: Real>(x: &Tensor<R>, k: usize, stride: usize) -> Result<Tensor<R>> {
    Ok(forward(x, k, stride)?.0)
}

impl<R: Real> Tape<R> {
    pub fn max_pool1d(&self, x: &Var<R>, k: usize, stride: usize) -> Result<Var<R>> {
        let (y, arg) = forward(x.value(), k, stride)?;
        let shape = x.shape().to_vec();
        let len = x.value().len();
        Ok(self.record(&[x], y, move |g| {
            let mut gx = Buffer::zeros(len)?;
            for (&src, &v) in arg.iter().zip(g.data()) {
                gx.as_mut_slice()[src] += v;
            }
            Ok(vec![Some(Tensor::from_buffer(&shape, gx)?)])
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(v: &[f64]) -> Tensor<f64> {
        Tensor::new(&[1, 1, v.len()], v.to_vec()).unwrap()
    }

    #[test]
    fn window_maxima() {
        assert_eq!(max_pool1d(&row(&[1.0, 4.0, 2.0, 3.0]), 2, 2).unwrap().data(), &[4.0, 3.0]);
        assert_eq!(max_pool1d(&row(&[2.0; 6]), 2, 2).unwrap().data(), &[2.0; 3]);
        let x = row(&[3.0, -1.0, 2.0]);
        assert_eq!(max_pool1d(&x, 1, 1).unwrap(), x);
        assert!(max_pool1d(&row(&[1.0]), 2, 2).is_err());
    }

    #[test]
    fn ties_route_to_first_index() {
        let tape = Tape::<f64>::new();
        let x = tape.leaf(row(&[5.0, 5.0, 1.0, 1.0]));
        let y = tape.max_pool1d(&x, 2, 2).unwrap();
        let loss = tape.sum_all(&y).unwrap();
        let g = tape.backward(&loss).unwrap();
        assert_eq!(g.get(&x).unwrap().data(), &[1.0, 0.0, 1.0, 0.0]);
    }
}
