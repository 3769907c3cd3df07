use std::fmt;
use std::sync::Arc;

use crate::error::{shape_err, Error, Result};
use crate::memory::{self, Ticket};
use crate::real::{DType, Real};

/// Owned, tracked element buffer. Allocation goes through the active memory
/// tracker so that over-cap requests fail before memory is touched.
pub struct Buffer<R> {
    data: Vec<R>,
    _ticket: Option<Ticket>,
}

impl<R: Real> Buffer<R> {
    pub fn zeros(len: usize) -> Result<Self> {
        let ticket = memory::reserve(len * std::mem::size_of::<R>())?;
        Ok(Buffer {
            data: vec![R::zero(); len],
            _ticket: ticket,
        })
    }

    pub fn from_vec(data: Vec<R>) -> Result<Self> {
        let ticket = memory::reserve(data.len() * std::mem::size_of::<R>())?;
        Ok(Buffer {
            data,
            _ticket: ticket,
        })
    }

    pub fn as_slice(&self) -> &[R] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [R] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

/// Immutable row-major array. Cloning shares the underlying buffer.
#[derive(Clone)]
pub struct Tensor<R> {
    shape: Vec<usize>,
    buf: Arc<Buffer<R>>,
}

pub fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl<R: Real> Tensor<R> {
    pub fn from_buffer(shape: &[usize], buf: Buffer<R>) -> Result<Self> {
        if numel(shape) != buf.len() {
            return shape_err(
                "tensor",
                format!("shape {shape:?} needs {} values, got {}", numel(shape), buf.len()),
            );
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            buf: Arc::new(buf),
        })
    }

    pub fn new(shape: &[usize], data: Vec<R>) -> Result<Self> {
        if numel(shape) != data.len() {
            return shape_err(
                "tensor",
                format!("shape {shape:?} needs {} values, got {}", numel(shape), data.len()),
            );
        }
        Self::from_buffer(shape, Buffer::from_vec(data)?)
    }

    pub fn from_f64(shape: &[usize], data: &[f64]) -> Result<Self> {
        Self::new(shape, data.iter().map(|&v| R::of_f64(v)).collect())
    }

    pub fn zeros(shape: &[usize]) -> Result<Self> {
        Self::from_buffer(shape, Buffer::zeros(numel(shape))?)
    }

    pub fn full(shape: &[usize], value: R) -> Result<Self> {
        let mut buf = Buffer::zeros(numel(shape))?;
        buf.as_mut_slice().fill(value);
        Self::from_buffer(shape, buf)
    }

    pub fn ones(shape: &[usize]) -> Result<Self> {
        Self::full(shape, R::one())
    }

    pub fn scalar(value: R) -> Result<Self> {
        Self::new(&[], vec![value])
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn dim(&self, axis: usize) -> usize {
        self.shape[axis]
    }

    pub fn len(&self) -> usize {
        self.buf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buf.is_empty()
    }

    pub fn data(&self) -> &[R] {
        self.buf.as_slice()
    }

    pub fn to_vec(&self) -> Vec<R> {
        self.data().to_vec()
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.data().iter().map(|v| v.as_f64()).collect()
    }

    pub fn dtype(&self) -> DType {
        R::DTYPE
    }

    pub fn size_bytes(&self) -> usize {
        self.len() * std::mem::size_of::<R>()
    }

    /// Single value of a one-element tensor.
    pub fn item(&self) -> Result<R> {
        if self.len() != 1 {
            return shape_err("item", format!("tensor of shape {:?} is not a scalar", self.shape));
        }
        Ok(self.data()[0])
    }

    /// Same buffer viewed under a different shape with equal element count.
    pub fn reshape(&self, shape: &[usize]) -> Result<Self> {
        if numel(shape) != self.len() {
            return shape_err(
                "reshape",
                format!("cannot view {:?} as {shape:?}", self.shape),
            );
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            buf: Arc::clone(&self.buf),
        })
    }

    pub fn map(&self, f: impl Fn(R) -> R) -> Result<Self> {
        let mut buf = Buffer::zeros(self.len())?;
        for (o, &v) in buf.as_mut_slice().iter_mut().zip(self.data()) {
            *o = f(v);
        }
        Self::from_buffer(&self.shape, buf)
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(R, R) -> R) -> Result<Self> {
        if self.shape != other.shape {
            return shape_err(
                "zip",
                format!("shapes {:?} and {:?} differ", self.shape, other.shape),
            );
        }
        let mut buf = Buffer::zeros(self.len())?;
        for ((o, &a), &b) in buf.as_mut_slice().iter_mut().zip(self.data()).zip(other.data()) {
            *o = f(a, b);
        }
        Self::from_buffer(&self.shape, buf)
    }

    pub fn cast<S: Real>(&self) -> Result<Tensor<S>> {
        Tensor::new(&self.shape, self.data().iter().map(|v| S::of_f64(v.as_f64())).collect())
    }

    pub fn sum(&self) -> R {
        self.data().iter().copied().sum()
    }

    pub fn max_abs(&self) -> R {
        self.data().iter().fold(R::zero(), |m, v| m.max(v.abs()))
    }

    pub fn all_finite(&self) -> bool {
        self.data().iter().all(|v| v.is_finite())
    }

    /// First non-finite position, rendered as a multi-index.
    pub fn first_non_finite(&self) -> Option<Vec<usize>> {
        let flat = self.data().iter().position(|v| !v.is_finite())?;
        Some(unravel(flat, &self.shape))
    }

    pub fn ensure_finite(&self, op: &'static str) -> Result<()> {
        match self.first_non_finite() {
            None => Ok(()),
            Some(idx) => Err(Error::NonFinite {
                op,
                position: format!("{idx:?}"),
            }),
        }
    }
}

pub fn unravel(mut flat: usize, shape: &[usize]) -> Vec<usize> {
    let mut idx = vec![0; shape.len()];
    for (slot, &d) in idx.iter_mut().zip(shape).rev() {
        if d > 0 {
            *slot = flat % d;
            flat /= d;
        }
    }
    idx
}

impl<R: Real> fmt::Debug for Tensor<R> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        const SHOWN: usize = 8;
        write!(f, "Tensor<{}>{:?} [", R::DTYPE.name(), self.shape)?;
        for (i, v) in self.data().iter().take(SHOWN).enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{v}")?;
        }
        if self.len() > SHOWN {
            write!(f, ", ...")?;
        }
        write!(f, "]")
    }
}

impl<R: Real> PartialEq for Tensor<R> {
    fn eq(&self, other: &Self) -> bool {
        self.shape == other.shape && self.data() == other.data()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_must_match_data() {
        assert!(Tensor::<f32>::new(&[2, 3], vec![0.0; 5]).is_err());
        let t = Tensor::<f32>::new(&[2, 3], vec![0.0; 6]).unwrap();
        assert_eq!(t.len(), 6);
        assert!(t.reshape(&[3, 2]).is_ok());
        assert!(t.reshape(&[4]).is_err());
    }

    #[test]
    fn non_finite_position() {
        let t = Tensor::<f64>::new(&[2, 2], vec![0.0, 1.0, f64::NAN, 2.0]).unwrap();
        assert_eq!(t.first_non_finite(), Some(vec![1, 0]));
    }
}
