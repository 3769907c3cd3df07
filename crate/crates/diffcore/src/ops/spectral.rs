use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::error::{shape_err, Result};
use crate::ops::split_last;
use crate::real::Real;
use crate::tape::{Tape, Var};
use crate::tensor::{Buffer, Tensor};

/// Planned unnormalized rFFT magnitude transform for one signal length.
pub struct RfftMag<R: Real> {
    len: usize,
    forward: Arc<dyn Fft<R>>,
    inverse: Arc<dyn Fft<R>>,
}

impl<R: Real> RfftMag<R> {
    pub fn new(len: usize) -> Result<Self> {
        if len < 2 {
            return shape_err("rfft_mag", format!("length must be at least 2, got {len}"));
        }
        let mut planner = FftPlanner::new();
        Ok(RfftMag {
            len,
            forward: planner.plan_fft_forward(len),
            inverse: planner.plan_fft_inverse(len),
        })
    }

    pub fn bins(&self) -> usize {
        self.len / 2 + 1
    }

    fn check(&self, shape: &[usize]) -> Result<usize> {
        let (rows, t) = split_last("rfft_mag", shape)?;
        if t != self.len {
            return shape_err("rfft_mag", format!("planned for length {}, got {shape:?}", self.len));
        }
        Ok(rows)
    }

    fn spectrum(&self, row: &[R], scratch: &mut [Complex<R>]) {
        for (s, &v) in scratch.iter_mut().zip(row) {
            *s = Complex::new(v, R::zero());
        }
        self.forward.process(scratch);
    }

    pub fn apply(&self, x: &Tensor<R>) -> Result<Tensor<R>> {
        let rows = self.check(x.shape())?;
        let nb = self.bins();
        let mut out = Buffer::zeros(rows * nb)?;
        let mut scratch = vec![Complex::new(R::zero(), R::zero()); self.len];
        for (orow, row) in out.as_mut_slice().chunks_mut(nb).zip(x.data().chunks(self.len)) {
            self.spectrum(row, &mut scratch);
            for (o, c) in orow.iter_mut().zip(&scratch) {
                *o = c.norm();
            }
        }
        let mut shape = x.shape().to_vec();
        *shape.last_mut().unwrap() = nb;
        Tensor::from_buffer(&shape, out)
    }

    /// Gradient w.r.t. the input given the gradient w.r.t. the magnitudes.
    /// Bins with zero magnitude contribute nothing (subgradient 0).
    pub fn backward(&self, x: &Tensor<R>, g: &Tensor<R>) -> Result<Tensor<R>> {
        let rows = self.check(x.shape())?;
        let nb = self.bins();
        let mut gx = Buffer::zeros(rows * self.len)?;
        let mut spec = vec![Complex::new(R::zero(), R::zero()); self.len];
        for r in 0..rows {
            let row = &x.data()[r * self.len..(r + 1) * self.len];
            self.spectrum(row, &mut spec);
            for (k, s) in spec.iter_mut().enumerate() {
                *s = if k < nb {
                    let m = s.norm();
                    if m > R::zero() {
                        *s * (g.data()[r * nb + k] / m)
                    } else {
                        Complex::new(R::zero(), R::zero())
                    }
                } else {
                    Complex::new(R::zero(), R::zero())
                };
            }
            self.inverse.process(&mut spec);
            for (o, s) in gx.as_mut_slice()[r * self.len..(r + 1) * self.len].iter_mut().zip(&spec) {
                *o = s.re;
            }
        }
        Tensor::from_buffer(x.shape(), gx)
    }
}

/// Magnitudes of the unnormalized DFT over the non-negative bins of the
/// trailing axis: output trailing dim is `T/2 + 1`.
pub fn rfft_mag<R: Real>(x: &Tensor<R>) -> Result<Tensor<R>> {
    let (_, t) = split_last("rfft_mag", x.shape())?;
    RfftMag::new(t)?.apply(x)
}

impl<R: Real> Tape<R> {
    pub fn rfft_mag(&self, x: &Var<R>) -> Result<Var<R>> {
        let (_, t) = split_last("rfft_mag", x.shape())?;
        let plan = RfftMag::new(t)?;
        let y = plan.apply(x.value())?;
        let xv = x.value().clone();
        Ok(self.record(&[x], y, move |g| Ok(vec![Some(plan.backward(&xv, g)?)])))
    }
}
