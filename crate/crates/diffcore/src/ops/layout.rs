use crate::error::{shape_err, Result};
use crate::real::Real;
use crate::tape::{Tape, Var};
use crate::tensor::{Buffer, Tensor};

/// Swaps the two trailing axes of a rank ≥ 2 tensor.
pub fn transpose_last_two<R: Real>(x: &Tensor<R>) -> Result<Tensor<R>> {
    let r = x.rank();
    if r < 2 {
        return shape_err("transpose_last_two", format!("need rank >= 2, got {:?}", x.shape()));
    }
    let (m, n) = (x.dim(r - 2), x.dim(r - 1));
    let mut out = Buffer::zeros(x.len())?;
    let o = out.as_mut_slice();
    for (src, dst) in x.data().chunks(m * n).zip(o.chunks_mut(m * n)) {
        for i in 0..m {
            for j in 0..n {
                dst[j * m + i] = src[i * n + j];
            }
        }
    }
    let mut shape = x.shape().to_vec();
    shape.swap(r - 2, r - 1);
    Tensor::from_buffer(&shape, out)
}

fn outer_inner(shape: &[usize], axis: usize) -> (usize, usize) {
    (shape[..axis].iter().product(), shape[axis + 1..].iter().product())
}

/// Joins tensors along `axis`; all other dims must agree.
pub fn concat<R: Real>(parts: &[&Tensor<R>], axis: usize) -> Result<Tensor<R>> {
    let Some(first) = parts.first() else {
        return shape_err("concat", "no inputs");
    };
    if axis >= first.rank() {
        return shape_err("concat", format!("axis {axis} out of range for {:?}", first.shape()));
    }
    let mut total = 0;
    for p in parts {
        let same_rank = p.rank() == first.rank();
        let others_match = same_rank
            && p.shape().iter().zip(first.shape()).enumerate().all(|(i, (a, b))| i == axis || a == b);
        if !others_match {
            return shape_err(
                "concat",
                format!("cannot join {:?} with {:?} on axis {axis}", first.shape(), p.shape()),
            );
        }
        total += p.dim(axis);
    }
    let mut shape = first.shape().to_vec();
    shape[axis] = total;
    let (outer, inner) = outer_inner(&shape, axis);
    let mut out = Buffer::zeros(outer * total * inner)?;
    let o = out.as_mut_slice();
    let mut offset = 0;
    for p in parts {
        let w = p.dim(axis) * inner;
        for r in 0..outer {
            let dst = r * total * inner + offset;
            o[dst..dst + w].copy_from_slice(&p.data()[r * w..(r + 1) * w]);
        }
        offset += w;
    }
    Tensor::from_buffer(&shape, out)
}

/// Slice `[start, start + len)` of the trailing axis.
pub fn narrow<R: Real>(x: &Tensor<R>, start: usize, len: usize) -> Result<Tensor<R>> {
    let Some(&t) = x.shape().last() else {
        return shape_err("narrow", "scalar input");
    };
    if start + len > t {
        return shape_err("narrow", format!("range {start}..{} exceeds length {t}", start + len));
    }
    let rows = x.len() / t.max(1);
    let mut out = Buffer::zeros(rows * len)?;
    for (dst, src) in out.as_mut_slice().chunks_mut(len.max(1)).zip(x.data().chunks(t.max(1))) {
        dst.copy_from_slice(&src[start..start + len]);
    }
    let mut shape = x.shape().to_vec();
    *shape.last_mut().unwrap() = len;
    Tensor::from_buffer(&shape, out)
}

/// Right-pads the trailing axis with zeros up to `len`.
pub fn pad_last<R: Real>(x: &Tensor<R>, len: usize) -> Result<Tensor<R>> {
    let Some(&t) = x.shape().last() else {
        return shape_err("pad", "scalar input");
    };
    if len < t {
        return shape_err("pad", format!("target length {len} shorter than {t}"));
    }
    let rows = if t == 0 { 0 } else { x.len() / t };
    let mut out = Buffer::zeros(rows * len)?;
    for (dst, src) in out.as_mut_slice().chunks_mut(len.max(1)).zip(x.data().chunks(t.max(1))) {
        dst[..t].copy_from_slice(src);
    }
    let mut shape = x.shape().to_vec();
    *shape.last_mut().unwrap() = len;
    Tensor::from_buffer(&shape, out)
}

impl<R: Real> Tape<R> {
    pub fn reshape(&self, x: &Var<R>, shape: &[usize]) -> Result<Var<R>> {
        let y = x.value().reshape(shape)?;
        let orig = x.shape().to_vec();
        Ok(self.record(&[x], y, move |g| Ok(vec![Some(g.reshape(&orig)?)])))
    }

    pub fn transpose_last_two(&self, x: &Var<R>) -> Result<Var<R>> {
        let y = transpose_last_two(x.value())?;
        Ok(self.record(&[x], y, |g| Ok(vec![Some(transpose_last_two(g)?)])))
    }

    pub fn concat(&self, parts: &[&Var<R>], axis: usize) -> Result<Var<R>> {
        let values: Vec<&Tensor<R>> = parts.iter().map(|p| p.value()).collect();
        let y = concat(&values, axis)?;
        let sizes: Vec<usize> = parts.iter().map(|p| p.value().dim(axis)).collect();
        let shape = y.shape().to_vec();
        Ok(self.record(parts, y, move |g| {
            let total: usize = sizes.iter().sum();
            let (outer, inner) = outer_inner(&shape, axis);
            let mut grads = Vec::with_capacity(sizes.len());
            let mut offset = 0;
            for &s in &sizes {
                let w = s * inner;
                let mut buf = Buffer::zeros(outer * w)?;
                for r in 0..outer {
                    let src = r * total * inner + offset;
                    buf.as_mut_slice()[r * w..(r + 1) * w].copy_from_slice(&g.data()[src..src + w]);
                }
                let mut part_shape = shape.clone();
                part_shape[axis] = s;
                grads.push(Some(Tensor::from_buffer(&part_shape, buf)?));
                offset += w;
            }
            Ok(grads)
        }))
    }

    pub fn narrow(&self, x: &Var<R>, start: usize, len: usize) -> Result<Var<R>> {
        let y = narrow(x.value(), start, len)?;
        let t = *x.shape().last().unwrap();
        let orig = x.shape().to_vec();
        Ok(self.record(&[x], y, move |g| {
            let rows = g.len() / len.max(1);
            let mut buf = Buffer::zeros(rows * t)?;
            if len > 0 {
                for (dst, src) in buf.as_mut_slice().chunks_mut(t).zip(g.data().chunks(len)) {
                    dst[start..start + len].copy_from_slice(src);
                }
            }
            Ok(vec![Some(Tensor::from_buffer(&orig, buf)?)])
        }))
    }

    pub fn pad_last(&self, x: &Var<R>, len: usize) -> Result<Var<R>> {
        let t = *x.shape().last().unwrap_or(&0);
        let y = pad_last(x.value(), len)?;
        Ok(self.record(&[x], y, move |g| Ok(vec![Some(narrow(g, 0, t)?)])))
    }
}
