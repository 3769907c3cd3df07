use crate::error::{shape_err, Result};
use crate::ops::expect_rank;
use crate::real::Real;
use crate::tape::{Tape, Var};
use crate::tensor::{Buffer, Tensor};

/// Left index and right weight for each output position. Position `i` maps
/// to `i (T-1) / (T_out-1)`; integer arithmetic keeps grid points exact.
fn plan<R: Real>(t: usize, tout: usize) -> Vec<(usize, R)> {
    (0..tout)
        .map(|i| {
            let num = i * (t - 1);
            let den = tout - 1;
            let lo = (num / den).min(t - 2);
            let rem = num - lo * den;
            (lo, R::of_usize(rem) / R::of_usize(den))
        })
        .collect()
}

fn check(x: &[usize], tout: usize) -> Result<()> {
    expect_rank("interp_upsample", x, 3)?;
    if x[2] < 2 || tout < 2 {
        return shape_err(
            "interp_upsample",
            format!("lengths must be at least 2, got {} -> {tout}", x[2]),
        );
    }
    Ok(())
}

/// Align-corners linear interpolation along the time axis.
pub fn interp_upsample<R: Real>(x: &Tensor<R>, tout: usize) -> Result<Tensor<R>> {
    check(x.shape(), tout)?;
    let t = x.dim(2);
    let p = plan::<R>(t, tout);
    let rows = x.dim(0) * x.dim(1);
    let mut out = Buffer::zeros(rows * tout)?;
    for (orow, row) in out.as_mut_slice().chunks_mut(tout).zip(x.data().chunks(t)) {
        for (o, &(lo, w)) in orow.iter_mut().zip(&p) {
            *o = if w == R::zero() {
                row[lo]
            } else {
                row[lo] * (R::one() - w) + row[lo + 1] * w
            };
        }
    }
    Tensor::from_buffer(&[x.dim(0), x.dim(1), tout], out)
}

impl<R: Real> Tape<R> {
    pub fn interp_upsample(&self, x: &Var<R>, tout: usize) -> Result<Var<R>> {
        let y = interp_upsample(x.value(), tout)?;
        let shape = x.shape().to_vec();
        Ok(self.record(&[x], y, move |g| {
            let t = shape[2];
            let p = plan::<R>(t, tout);
            let mut gx = Buffer::zeros(shape.iter().product())?;
            for (dst, grow) in gx.as_mut_slice().chunks_mut(t).zip(g.data().chunks(tout)) {
                for (&gv, &(lo, w)) in grow.iter().zip(&p) {
                    dst[lo] += gv * (R::one() - w);
                    dst[lo + 1] += gv * w;
                }
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
    fn hand_examples() {
        assert_eq!(interp_upsample(&row(&[0.0, 2.0]), 3).unwrap().data(), &[0.0, 1.0, 2.0]);
        assert_eq!(
            interp_upsample(&row(&[0.0, 3.0, 6.0]), 5).unwrap().data(),
            &[0.0, 1.5, 3.0, 4.5, 6.0]
        );
        let x = row(&[1.0, -2.0, 0.25, 7.0]);
        assert_eq!(interp_upsample(&x, 4).unwrap(), x);
    }

    #[test]
    fn rejects_short_inputs() {
        assert!(interp_upsample(&row(&[1.0]), 4).is_err());
        assert!(interp_upsample(&row(&[1.0, 2.0]), 1).is_err());
    }
}
