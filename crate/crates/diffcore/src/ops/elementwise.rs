use crate::error::{shape_err, Result};
use crate::ops::split_last;
use crate::real::Real;
use crate::tape::{Tape, Var};
use crate::tensor::{Buffer, Tensor};

fn sigmoid<R: Real>(x: R) -> R {
    if x >= R::zero() {
        R::one() / (R::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (R::one() + e)
    }
}

fn softplus_value<R: Real>(x: R) -> R {
    x.max(R::zero()) + (-x.abs()).exp().ln_1p()
}

fn same_shape(op: &'static str, a: &Tensor<impl Real>, b: &Tensor<impl Real>) -> Result<()> {
    if a.shape() != b.shape() {
        return shape_err(op, format!("shapes {:?} and {:?} differ", a.shape(), b.shape()));
    }
    Ok(())
}

impl<R: Real> Tape<R> {
    fn unary(
        &self,
        x: &Var<R>,
        f: impl Fn(R) -> R,
        df: impl Fn(R, R) -> R + 'static,
    ) -> Result<Var<R>> {
        let y = x.value().map(f)?;
        let xs = x.value().clone();
        let ys = y.clone();
        Ok(self.record(&[x], y, move |g| {
            let mut buf = Buffer::zeros(g.len())?;
            for (((o, &gv), &xv), &yv) in buf
                .as_mut_slice()
                .iter_mut()
                .zip(g.data())
                .zip(xs.data())
                .zip(ys.data())
            {
                *o = gv * df(xv, yv);
            }
            Ok(vec![Some(Tensor::from_buffer(g.shape(), buf)?)])
        }))
    }

    pub fn add(&self, a: &Var<R>, b: &Var<R>) -> Result<Var<R>> {
        same_shape("add", a.value(), b.value())?;
        let y = a.value().zip_map(b.value(), |x, y| x + y)?;
        Ok(self.record(&[a, b], y, |g| Ok(vec![Some(g.clone()), Some(g.clone())])))
    }

    pub fn sub(&self, a: &Var<R>, b: &Var<R>) -> Result<Var<R>> {
        same_shape("sub", a.value(), b.value())?;
        let y = a.value().zip_map(b.value(), |x, y| x - y)?;
        Ok(self.record(&[a, b], y, |g| Ok(vec![Some(g.clone()), Some(g.map(|v| -v)?)])))
    }

    pub fn mul(&self, a: &Var<R>, b: &Var<R>) -> Result<Var<R>> {
        same_shape("mul", a.value(), b.value())?;
        let y = a.value().zip_map(b.value(), |x, y| x * y)?;
        let (av, bv) = (a.value().clone(), b.value().clone());
        Ok(self.record(&[a, b], y, move |g| {
            Ok(vec![
                Some(g.zip_map(&bv, |g, b| g * b)?),
                Some(g.zip_map(&av, |g, a| g * a)?),
            ])
        }))
    }

    pub fn scale(&self, x: &Var<R>, c: R) -> Result<Var<R>> {
        let y = x.value().map(|v| v * c)?;
        Ok(self.record(&[x], y, move |g| Ok(vec![Some(g.map(|v| v * c)?)])))
    }

    pub fn neg(&self, x: &Var<R>) -> Result<Var<R>> {
        self.scale(x, -R::one())
    }

    pub fn exp(&self, x: &Var<R>) -> Result<Var<R>> {
        self.unary(x, |v| v.exp(), |_, y| y)
    }

    pub fn square(&self, x: &Var<R>) -> Result<Var<R>> {
        let two = R::of_f64(2.0);
        self.unary(x, |v| v * v, move |x, _| two * x)
    }

    /// Elementwise |x|; the derivative at 0 is taken as 0.
    pub fn abs(&self, x: &Var<R>) -> Result<Var<R>> {
        self.unary(x, |v| v.abs(), |x, _| {
            if x > R::zero() {
                R::one()
            } else if x < R::zero() {
                -R::one()
            } else {
                R::zero()
            }
        })
    }

    pub fn silu(&self, x: &Var<R>) -> Result<Var<R>> {
        self.unary(x, |v| v * sigmoid(v), |x, _| {
            let s = sigmoid(x);
            s * (R::one() + x * (R::one() - s))
        })
    }

    pub fn softplus(&self, x: &Var<R>) -> Result<Var<R>> {
        self.unary(x, softplus_value, |x, _| sigmoid(x))
    }

    pub fn sum_all(&self, x: &Var<R>) -> Result<Var<R>> {
        let y = Tensor::scalar(x.value().sum())?;
        let shape = x.shape().to_vec();
        Ok(self.record(&[x], y, move |g| {
            Ok(vec![Some(Tensor::full(&shape, g.data()[0])?)])
        }))
    }

    pub fn mean_all(&self, x: &Var<R>) -> Result<Var<R>> {
        let n = x.value().len();
        if n == 0 {
            return shape_err("mean", "empty tensor");
        }
        let s = self.sum_all(x)?;
        self.scale(&s, R::one() / R::of_usize(n))
    }

    /// `x[..., j] * v[j]` with `v` broadcast over all leading dims.
    pub fn mul_bcast_last(&self, x: &Var<R>, v: &Var<R>) -> Result<Var<R>> {
        let (rows, d) = split_last("mul_bcast_last", x.shape())?;
        if v.shape() != [d] {
            return shape_err(
                "mul_bcast_last",
                format!("vector shape {:?} does not match trailing dim {d}", v.shape()),
            );
        }
        let (xv, vv) = (x.value().clone(), v.value().clone());
        let mut buf = Buffer::zeros(xv.len())?;
        for (orow, xrow) in buf.as_mut_slice().chunks_mut(d).zip(xv.data().chunks(d)) {
            for ((o, &a), &b) in orow.iter_mut().zip(xrow).zip(vv.data()) {
                *o = a * b;
            }
        }
        let y = Tensor::from_buffer(x.shape(), buf)?;
        Ok(self.record(&[x, v], y, move |g| {
            let mut gx = Buffer::zeros(g.len())?;
            let mut gv = vec![R::zero(); d];
            for r in 0..rows {
                let grow = &g.data()[r * d..(r + 1) * d];
                let xrow = &xv.data()[r * d..(r + 1) * d];
                for j in 0..d {
                    gx.as_mut_slice()[r * d + j] = grow[j] * vv.data()[j];
                    gv[j] += grow[j] * xrow[j];
                }
            }
            Ok(vec![
                Some(Tensor::from_buffer(g.shape(), gx)?),
                Some(Tensor::new(&[d], gv)?),
            ])
        }))
    }

    /// Multiplies each contiguous group of trailing channels by one gate
    /// value: `y[..., g*P + p] = x[..., g*P + p] * s[..., g]` where
    /// `x` has trailing dim `G*P` and `s` has trailing dim `G`.
    pub fn group_scale(&self, x: &Var<R>, s: &Var<R>) -> Result<Var<R>> {
        let (rows, d) = split_last("group_scale", x.shape())?;
        let (srows, groups) = split_last("group_scale", s.shape())?;
        if srows != rows
            || x.shape()[..x.shape().len() - 1] != s.shape()[..s.shape().len() - 1]
            || groups == 0
            || d % groups != 0
        {
            return shape_err(
                "group_scale",
                format!("cannot gate {:?} with {:?}", x.shape(), s.shape()),
            );
        }
        let p = d / groups;
        let (xv, sv) = (x.value().clone(), s.value().clone());
        let mut buf = Buffer::zeros(xv.len())?;
        {
            let out = buf.as_mut_slice();
            for r in 0..rows {
                for g in 0..groups {
                    let gate = sv.data()[r * groups + g];
                    let base = r * d + g * p;
                    for i in base..base + p {
                        out[i] = xv.data()[i] * gate;
                    }
                }
            }
        }
        let y = Tensor::from_buffer(x.shape(), buf)?;
        Ok(self.record(&[x, s], y, move |gout| {
            let mut gx = Buffer::zeros(gout.len())?;
            let mut gs = Buffer::zeros(sv.len())?;
            for r in 0..rows {
                for g in 0..groups {
                    let gate = sv.data()[r * groups + g];
                    let base = r * d + g * p;
                    let mut acc = R::zero();
                    for i in base..base + p {
                        gx.as_mut_slice()[i] = gout.data()[i] * gate;
                        acc += gout.data()[i] * xv.data()[i];
                    }
                    gs.as_mut_slice()[r * groups + g] = acc;
                }
            }
            Ok(vec![
                Some(Tensor::from_buffer(gout.shape(), gx)?),
                Some(Tensor::from_buffer(sv.shape(), gs)?),
            ])
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
        Tensor::new(shape, v.to_vec()).unwrap()
    }

    #[test]
    fn silu_and_softplus_at_zero() {
        let tape = Tape::<f64>::no_grad();
        let z = tape.constant(t(&[1], &[0.0]));
        assert_eq!(tape.silu(&z).unwrap().value().data()[0], 0.0);
        let sp = tape.softplus(&z).unwrap().value().data()[0];
        assert!((sp - 2f64.ln()).abs() < 1e-15);
        assert!((sp - 0.693147).abs() < 1e-6);
    }

    #[test]
    fn softplus_is_stable_for_large_inputs() {
        let tape = Tape::<f32>::no_grad();
        let x = tape.constant(Tensor::new(&[2], vec![100.0f32, -100.0]).unwrap());
        let y = tape.softplus(&x).unwrap();
        assert_eq!(y.value().data()[0], 100.0);
        assert!(y.value().data()[1] > 0.0 && y.value().data()[1] < 1e-40);
    }

    #[test]
    fn add_rejects_shape_mismatch() {
        let tape = Tape::<f64>::no_grad();
        let a = tape.constant(t(&[2], &[1.0, 2.0]));
        let b = tape.constant(t(&[3], &[1.0, 2.0, 3.0]));
        assert!(tape.add(&a, &b).is_err());
    }

    #[test]
    fn mul_gradient_swaps_operands() {
        let tape = Tape::<f64>::new();
        let a = tape.leaf(t(&[2], &[2.0, 3.0]));
        let b = tape.leaf(t(&[2], &[5.0, 7.0]));
        let y = tape.sum_all(&tape.mul(&a, &b).unwrap()).unwrap();
        let g = tape.backward(&y).unwrap();
        assert_eq!(g.get(&a).unwrap().data(), &[5.0, 7.0]);
        assert_eq!(g.get(&b).unwrap().data(), &[2.0, 3.0]);
    }

    #[test]
    fn unused_leaf_gets_zero_gradient() {
        let tape = Tape::<f64>::new();
        let a = tape.leaf(t(&[2], &[2.0, 3.0]));
        let unused = tape.leaf(t(&[3], &[1.0, 1.0, 1.0]));
        let y = tape.sum_all(&a).unwrap();
        let g = tape.backward(&y).unwrap();
        assert!(g.get(&unused).is_none());
        assert_eq!(g.get_or_zeros(&unused).unwrap().data(), &[0.0; 3]);
    }

    #[test]
    fn group_scale_gates_channel_groups() {
        let tape = Tape::<f64>::no_grad();
        let x = tape.constant(t(&[1, 4], &[1.0, 2.0, 3.0, 4.0]));
        let s = tape.constant(t(&[1, 2], &[10.0, -1.0]));
        let y = tape.group_scale(&x, &s).unwrap();
        assert_eq!(y.value().data(), &[10.0, 20.0, -3.0, -4.0]);
    }
}
