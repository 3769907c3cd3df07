//! Bounds-checked strided matrix views over flat buffers, multiplied with
//! the `matrixmultiply` kernels.

use crate::real::Real;

#[derive(Clone, Copy)]
pub struct MatRef<'a, R> {
    data: &'a [R],
    offset: usize,
    rows: usize,
    cols: usize,
    rs: usize,
    cs: usize,
}

pub struct MatMut<'a, R> {
    data: &'a mut [R],
    offset: usize,
    rows: usize,
    cols: usize,
    rs: usize,
    cs: usize,
}

fn last_index(offset: usize, rows: usize, cols: usize, rs: usize, cs: usize) -> usize {
    offset + (rows - 1) * rs + (cols - 1) * cs
}

impl<'a, R: Real> MatRef<'a, R> {
    pub fn new(data: &'a [R], offset: usize, rows: usize, cols: usize, rs: usize, cs: usize) -> Self {
        if rows > 0 && cols > 0 {
            assert!(
                last_index(offset, rows, cols, rs, cs) < data.len(),
                "matrix view out of bounds"
            );
        }
        MatRef { data, offset, rows, cols, rs, cs }
    }

    /// Dense row-major `rows x cols` block starting at `offset`.
    pub fn dense(data: &'a [R], offset: usize, rows: usize, cols: usize) -> Self {
        Self::new(data, offset, rows, cols, cols, 1)
    }

    pub fn t(self) -> Self {
        MatRef {
            rows: self.cols,
            cols: self.rows,
            rs: self.cs,
            cs: self.rs,
            ..self
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }
}

impl<'a, R: Real> MatMut<'a, R> {
    pub fn new(data: &'a mut [R], offset: usize, rows: usize, cols: usize, rs: usize, cs: usize) -> Self {
        if rows > 0 && cols > 0 {
            assert!(
                last_index(offset, rows, cols, rs, cs) < data.len(),
                "matrix view out of bounds"
            );
        }
        MatMut { data, offset, rows, cols, rs, cs }
    }

    pub fn dense(data: &'a mut [R], offset: usize, rows: usize, cols: usize) -> Self {
        Self::new(data, offset, rows, cols, cols, 1)
    }

    pub fn t(self) -> Self {
        MatMut {
            rows: self.cols,
            cols: self.rows,
            rs: self.cs,
            cs: self.rs,
            ..self
        }
    }
}

/// `c = alpha * a b + beta * c`.
pub fn gemm<R: Real>(alpha: R, a: MatRef<'_, R>, b: MatRef<'_, R>, beta: R, c: MatMut<'_, R>) {
    assert_eq!(a.cols, b.rows, "gemm inner dimension");
    assert_eq!(a.rows, c.rows, "gemm output rows");
    assert_eq!(b.cols, c.cols, "gemm output cols");
    let (m, k, n) = (a.rows, a.cols, b.cols);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        for i in 0..m {
            for j in 0..n {
                let idx = c.offset + i * c.rs + j * c.cs;
                c.data[idx] = if beta == R::zero() { R::zero() } else { beta * c.data[idx] };
            }
        }
        return;
    }
    // SAFETY: all three views were bounds-checked at construction and `c`
    // holds a unique borrow, so it cannot alias `a` or `b`.
    unsafe {
        R::gemm_raw(
            m,
            k,
            n,
            alpha,
            a.data.as_ptr().add(a.offset),
            a.rs as isize,
            a.cs as isize,
            b.data.as_ptr().add(b.offset),
            b.rs as isize,
            b.cs as isize,
            beta,
            c.data.as_mut_ptr().add(c.offset),
            c.rs as isize,
            c.cs as isize,
        )
    }
}
