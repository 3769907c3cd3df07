//! Selective linear recurrence
//!
//! ```text
//! h_t = a_t h_{t-1} + x_t ⊗ B_t      y_t = h_t C_t
//! ```
//!
//! over layouts `x: [B, T, G·P]`, `a: [B, T, G]`, `B, C: [B, T, N]`. Each of
//! the `G` decay groups owns `P` consecutive channels and a `P × N` state;
//! `B` and `C` are shared by all groups.

use diffcore::gemm::{gemm, MatMut, MatRef};
use diffcore::{Buffer, Real, Tape, Tensor, Var};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScanDims {
    pub batch: usize,
    pub len: usize,
    pub groups: usize,
    pub per_group: usize,
    pub state: usize,
}

impl ScanDims {
    fn width(&self) -> usize {
        self.groups * self.per_group
    }
}

pub fn scan_dims<R: Real>(x: &Tensor<R>, a: &Tensor<R>, b: &Tensor<R>, c: &Tensor<R>) -> Result<ScanDims> {
    let bad = |msg: String| Err(Error::Invalid(format!("scan: {msg}")));
    if x.rank() != 3 || a.rank() != 3 || b.rank() != 3 || c.rank() != 3 {
        return bad("all inputs must be rank 3".into());
    }
    let (batch, len, width) = (x.dim(0), x.dim(1), x.dim(2));
    let groups = a.dim(2);
    let state = b.dim(2);
    if a.shape()[..2] != [batch, len] || b.shape()[..2] != [batch, len] || c.shape() != b.shape() {
        return bad(format!(
            "sequence shapes disagree: x {:?}, a {:?}, B {:?}, C {:?}",
            x.shape(),
            a.shape(),
            b.shape(),
            c.shape()
        ));
    }
    if groups == 0 || width % groups != 0 {
        return bad(format!("{groups} decay groups do not divide width {width}"));
    }
    if state == 0 {
        return bad("state size must be at least 1".into());
    }
    Ok(ScanDims {
        batch,
        len,
        groups,
        per_group: width / groups,
        state,
    })
}

fn non_finite(b: usize, t: usize, g: usize) -> Error {
    Error::Engine(diffcore::Error::NonFinite {
        op: "scan",
        position: format!("batch {b}, step {t}, group {g}"),
    })
}

/// Direct sequential evaluation; the reference every other path is tested against.
pub fn scan_naive<R: Real>(x: &Tensor<R>, a: &Tensor<R>, b: &Tensor<R>, c: &Tensor<R>) -> Result<Tensor<R>> {
    let d = scan_dims(x, a, b, c)?;
    let (w, n, p) = (d.width(), d.state, d.per_group);
    let mut y = vec![R::zero(); x.len()];
    let mut h = vec![R::zero(); p * n];
    for bi in 0..d.batch {
        for g in 0..d.groups {
            h.fill(R::zero());
            for t in 0..d.len {
                let at = a.data()[(bi * d.len + t) * d.groups + g];
                let bt = &b.data()[(bi * d.len + t) * n..][..n];
                let ct = &c.data()[(bi * d.len + t) * n..][..n];
                let row = (bi * d.len + t) * w + g * p;
                for pi in 0..p {
                    let xv = x.data()[row + pi];
                    let hrow = &mut h[pi * n..(pi + 1) * n];
                    let mut acc = R::zero();
                    for ((hv, &bv), &cv) in hrow.iter_mut().zip(bt).zip(ct) {
                        *hv = at * *hv + xv * bv;
                        acc += *hv * cv;
                    }
                    if !acc.is_finite() {
                        return Err(non_finite(bi, t, g));
                    }
                    y[row + pi] = acc;
                }
            }
        }
    }
    Ok(Tensor::new(x.shape(), y)?)
}

struct Chunked<'a, R> {
    d: ScanDims,
    x: &'a [R],
    a: &'a [R],
    b: &'a [R],
    c: &'a [R],
    chunk: usize,
}

impl<R: Real> Chunked<'_, R> {
    fn a_at(&self, bi: usize, t: usize, g: usize) -> R {
        self.a[(bi * self.d.len + t) * self.d.groups + g]
    }

    /// Runs the chunked forward. When `saved` is given it receives the state
    /// at the start of every chunk, laid out [batch][chunk][group][P·N].
    fn forward(&self, y: &mut [R], mut saved: Option<&mut [R]>) -> Result<()> {
        let d = self.d;
        let (w, n, p, l) = (d.width(), d.state, d.per_group, self.chunk);
        let n_chunks = d.len.div_ceil(l);
        let mut states = vec![R::zero(); d.groups * p * n];
        let mut gram = vec![R::zero(); l * l];
        let mut mask = vec![R::zero(); l * l];
        let mut cp = vec![R::zero(); l];
        let mut tmp = vec![R::zero(); l * p.max(n)];
        for bi in 0..d.batch {
            states.fill(R::zero());
            for ci in 0..n_chunks {
                let t0 = ci * l;
                let len = l.min(d.len - t0);
                let bc = MatRef::new(self.b, (bi * d.len + t0) * n, len, n, n, 1);
                let cc = MatRef::new(self.c, (bi * d.len + t0) * n, len, n, n, 1);
                // G = C Bᵀ is shared by every group in the chunk
                gemm(R::one(), cc, bc.t(), R::zero(), MatMut::new(&mut gram, 0, len, len, l, 1));
                for g in 0..d.groups {
                    let h = &mut states[g * p * n..(g + 1) * p * n];
                    if let Some(s) = saved.as_deref_mut() {
                        let off = ((bi * n_chunks + ci) * d.groups + g) * p * n;
                        s[off..off + p * n].copy_from_slice(h);
                    }
                    // mask[i][j] = a_{j+1} ··· a_i for j ≤ i, built by running
                    // products so that zero decays stay exact
                    let mut run = R::one();
                    for i in 0..len {
                        let ai = self.a_at(bi, t0 + i, g);
                        run *= ai;
                        cp[i] = run;
                        let row = &mut mask[i * l..i * l + len];
                        row[i] = gram[i * l + i];
                        let mut prod = R::one();
                        for j in (0..i).rev() {
                            prod *= self.a_at(bi, t0 + j + 1, g);
                            row[j] = gram[i * l + j] * prod;
                        }
                        for v in &mut row[i + 1..] {
                            *v = R::zero();
                        }
                    }
                    let xoff = (bi * d.len + t0) * w + g * p;
                    let xg = MatRef::new(self.x, xoff, len, p, w, 1);
                    gemm(
                        R::one(),
                        MatRef::new(&mask, 0, len, len, l, 1),
                        xg,
                        R::zero(),
                        MatMut::new(y, xoff, len, p, w, 1),
                    );
                    if ci > 0 {
                        // carried state: y_i += cp_i · C_i h_prevᵀ
                        let hm = MatRef::new(h, 0, p, n, n, 1);
                        gemm(R::one(), cc, hm.t(), R::zero(), MatMut::new(&mut tmp, 0, len, p, p, 1));
                        for i in 0..len {
                            for pi in 0..p {
                                y[xoff + i * w + pi] += cp[i] * tmp[i * p + pi];
                            }
                        }
                    }
                    // h ← cp_last h + Xᵀ diag(decay to chunk end) B
                    let mut suffix = R::one();
                    for j in (0..len).rev() {
                        for k in 0..n {
                            tmp[j * n + k] = suffix * self.b[(bi * d.len + t0 + j) * n + k];
                        }
                        suffix *= self.a_at(bi, t0 + j, g);
                    }
                    let decay_all = cp[len - 1];
                    for v in h.iter_mut() {
                        *v *= decay_all;
                    }
                    gemm(
                        R::one(),
                        xg.t(),
                        MatRef::new(&tmp, 0, len, n, n, 1),
                        R::one(),
                        MatMut::new(h, 0, p, n, n, 1),
                    );
                    if h.iter().any(|v| !v.is_finite()) {
                        return Err(non_finite(bi, t0 + len - 1, g));
                    }
                }
            }
        }
        Ok(())
    }

    fn saved_len(&self) -> usize {
        self.d.batch * self.d.len.div_ceil(self.chunk) * self.d.groups * self.d.per_group * self.d.state
    }

    /// Reverse recurrence. States inside each chunk are recomputed from the
    /// saved chunk-start state.
    fn backward(&self, saved: &[R], gy: &[R]) -> [Vec<R>; 4] {
        let d = self.d;
        let (w, n, p, l) = (d.width(), d.state, d.per_group, self.chunk);
        let n_chunks = d.len.div_ceil(l);
        let mut gx = vec![R::zero(); self.x.len()];
        let mut ga = vec![R::zero(); self.a.len()];
        let mut gb = vec![R::zero(); self.b.len()];
        let mut gc = vec![R::zero(); self.c.len()];
        let mut hs = vec![R::zero(); l * p * n];
        let mut dh = vec![R::zero(); p * n];
        for bi in 0..d.batch {
            for g in 0..d.groups {
                dh.fill(R::zero());
                for ci in (0..n_chunks).rev() {
                    let t0 = ci * l;
                    let len = l.min(d.len - t0);
                    let off = ((bi * n_chunks + ci) * d.groups + g) * p * n;
                    let start = &saved[off..off + p * n];
                    for i in 0..len {
                        let t = t0 + i;
                        let at = self.a_at(bi, t, g);
                        let bt = &self.b[(bi * d.len + t) * n..][..n];
                        let row = (bi * d.len + t) * w + g * p;
                        let (done, rest) = hs.split_at_mut(i * p * n);
                        let prev: &[R] = if i == 0 { start } else { &done[(i - 1) * p * n..] };
                        let cur = &mut rest[..p * n];
                        for pi in 0..p {
                            let xv = self.x[row + pi];
                            for k in 0..n {
                                cur[pi * n + k] = at * prev[pi * n + k] + xv * bt[k];
                            }
                        }
                    }
                    for i in (0..len).rev() {
                        let t = t0 + i;
                        let at = self.a_at(bi, t, g);
                        let seq = (bi * d.len + t) * n;
                        let row = (bi * d.len + t) * w + g * p;
                        let h_t = &hs[i * p * n..(i + 1) * p * n];
                        let h_prev = if i == 0 { &saved[off..off + p * n] } else { &hs[(i - 1) * p * n..i * p * n] };
                        let mut g_decay = R::zero();
                        for pi in 0..p {
                            let gyv = gy[row + pi];
                            let xv = self.x[row + pi];
                            let mut gxv = R::zero();
                            for k in 0..n {
                                let idx = pi * n + k;
                                gc[seq + k] += gyv * h_t[idx];
                                dh[idx] += gyv * self.c[seq + k];
                                gxv += dh[idx] * self.b[seq + k];
                                gb[seq + k] += dh[idx] * xv;
                                g_decay += dh[idx] * h_prev[idx];
                                dh[idx] *= at;
                            }
                            gx[row + pi] = gxv;
                        }
                        ga[(bi * d.len + t) * d.groups + g] = g_decay;
                    }
                }
            }
        }
        [gx, ga, gb, gc]
    }
}

/// Chunked evaluation: within-chunk terms as a masked quadratic form,
/// cross-chunk terms through the carried state. Linear time in `T` for a
/// fixed chunk size.
pub fn scan_chunked<R: Real>(x: &Tensor<R>, a: &Tensor<R>, b: &Tensor<R>, c: &Tensor<R>, chunk: usize) -> Result<Tensor<R>> {
    let d = scan_dims(x, a, b, c)?;
    if chunk == 0 {
        return Err(Error::Invalid("scan: chunk size must be at least 1".into()));
    }
    let chunk = chunk.min(d.len.max(1));
    let k = Chunked { d, x: x.data(), a: a.data(), b: b.data(), c: c.data(), chunk };
    let mut y = Buffer::zeros(x.len())?;
    if d.len > 0 {
        k.forward(y.as_mut_slice(), None)?;
    }
    Ok(Tensor::from_buffer(x.shape(), y)?)
}

/// Differentiable chunked scan w.r.t. all four inputs.
pub fn scan<R: Real>(tape: &Tape<R>, x: &Var<R>, a: &Var<R>, b: &Var<R>, c: &Var<R>, chunk: usize) -> Result<Var<R>> {
    let (xv, av, bv, cv) = (x.value(), a.value(), b.value(), c.value());
    let d = scan_dims(xv, av, bv, cv)?;
    if chunk == 0 {
        return Err(Error::Invalid("scan: chunk size must be at least 1".into()));
    }
    let chunk = chunk.min(d.len.max(1));
    let needs_grad = tape.is_recording() && [x, a, b, c].iter().any(|v| v.tracked());
    let k = Chunked { d, x: xv.data(), a: av.data(), b: bv.data(), c: cv.data(), chunk };
    let mut y = Buffer::zeros(xv.len())?;
    let saved = if needs_grad { Some(Buffer::<R>::zeros(k.saved_len())?) } else { None };
    let mut saved = saved;
    if d.len > 0 {
        k.forward(y.as_mut_slice(), saved.as_mut().map(|s| s.as_mut_slice()))?;
    }
    let y = Tensor::from_buffer(xv.shape(), y)?;
    let Some(saved) = saved else {
        return Ok(tape.constant(y));
    };
    let (xs, as_, bs, cs) = (xv.clone(), av.clone(), bv.clone(), cv.clone());
    Ok(tape.record(&[x, a, b, c], y, move |gy| {
        let k = Chunked { d, x: xs.data(), a: as_.data(), b: bs.data(), c: cs.data(), chunk };
        let [gx, ga, gb, gc] = k.backward(saved.as_slice(), gy.data());
        Ok(vec![
            Some(Tensor::new(xs.shape(), gx)?),
            Some(Tensor::new(as_.shape(), ga)?),
            Some(Tensor::new(bs.shape(), gb)?),
            Some(Tensor::new(cs.shape(), gc)?),
        ])
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], v: Vec<f64>) -> Tensor<f64> {
        Tensor::new(shape, v).unwrap()
    }

    #[test]
    fn unit_parameters_integrate() {
        let x = t(&[1, 3, 1], vec![1.0, 2.0, 3.0]);
        let one = t(&[1, 3, 1], vec![1.0; 3]);
        let y = scan_naive(&x, &one, &one, &one).unwrap();
        assert_eq!(y.data(), &[1.0, 3.0, 6.0]);
        for chunk in 1..4 {
            assert_eq!(scan_chunked(&x, &one, &one, &one, chunk).unwrap().data(), &[1.0, 3.0, 6.0]);
        }
    }

    #[test]
    fn zero_decay_is_memoryless() {
        let x = t(&[1, 4, 2], vec![1.0, -1.0, 2.0, 0.5, 3.0, 1.0, -2.0, 4.0]);
        let a = t(&[1, 4, 1], vec![0.0; 4]);
        let b = t(&[1, 4, 2], vec![1.0, 2.0, 0.5, -1.0, 3.0, 0.0, 1.0, 1.0]);
        let c = t(&[1, 4, 2], vec![2.0, 1.0, 1.0, 1.0, -1.0, 2.0, 0.5, 0.5]);
        let y = scan_chunked(&x, &a, &b, &c, 3).unwrap();
        for tt in 0..4 {
            let cb: f64 = (0..2).map(|k| c.data()[tt * 2 + k] * b.data()[tt * 2 + k]).sum();
            for p in 0..2 {
                assert!((y.data()[tt * 2 + p] - cb * x.data()[tt * 2 + p]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn non_finite_state_reports_position() {
        let x = t(&[1, 3, 1], vec![1.0, 1.0, 1.0]);
        let a = t(&[1, 3, 1], vec![1.0, f64::INFINITY, 1.0]);
        let one = t(&[1, 3, 1], vec![1.0; 3]);
        let err = scan_naive(&x, &a, &one, &one).unwrap_err().to_string();
        assert!(err.contains("step 1"), "{err}");
        assert!(scan_chunked(&x, &a, &one, &one, 2).is_err());
    }

    #[test]
    fn rejects_mismatched_shapes() {
        let x = t(&[1, 3, 2], vec![0.0; 6]);
        let a = t(&[1, 3, 3], vec![0.0; 9]);
        let b = t(&[1, 3, 1], vec![0.0; 3]);
        assert!(scan_naive(&x, &a, &b, &b).is_err());
    }
}
