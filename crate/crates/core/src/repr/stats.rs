use diffcore::{Buffer, Real, Tape, Tensor, Var};

use crate::error::{Error, Result};

pub const NUM_STATS: usize = 9;
pub const QUANTILES: [f64; 5] = [0.05, 0.25, 0.5, 0.75, 0.95];
pub const STAT_NAMES: [&str; NUM_STATS] = ["min", "max", "mean", "std", "q05", "q25", "q50", "q75", "q95"];

/// Ascending order of `row`, ties by position.
fn argsort<R: Real>(row: &[R]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..row.len()).collect();
    idx.sort_by(|&a, &b| row[a].partial_cmp(&row[b]).expect("finite input"));
    idx
}

/// Interpolation position of quantile `p` among `n` sorted values.
fn quantile_pos(p: f64, n: usize) -> (usize, usize, f64) {
    let pos = p * (n - 1) as f64;
    let lo = pos.floor() as usize;
    (lo, (lo + 1).min(n - 1), pos - lo as f64)
}

fn row_stats<R: Real>(row: &[R], order: &[usize]) -> ([f64; NUM_STATS], f64) {
    let n = row.len();
    let mean = row.iter().map(|v| v.as_f64()).sum::<f64>() / n as f64;
    let var = row.iter().map(|v| (v.as_f64() - mean).powi(2)).sum::<f64>() / n as f64;
    let std = var.sqrt();
    let sorted = |i: usize| row[order[i]].as_f64();
    let mut s = [sorted(0), sorted(n - 1), mean, std, 0.0, 0.0, 0.0, 0.0, 0.0];
    for (k, &p) in QUANTILES.iter().enumerate() {
        let (lo, hi, frac) = quantile_pos(p, n);
        s[4 + k] = sorted(lo) + frac * (sorted(hi) - sorted(lo));
    }
    (s, mean)
}

fn check_input<R: Real>(f: &Tensor<R>) -> Result<(usize, usize)> {
    let &[b, c, t] = f.shape() else {
        return Err(Error::Invalid(format!("feature map must be [B, C, T], got {:?}", f.shape())));
    };
    if t == 0 {
        return Err(Error::Invalid("feature map has an empty temporal axis".into()));
    }
    f.ensure_finite("extract_stats")?;
    Ok((b * c, t))
}

/// Per-channel [min, max, mean, std, Q0.05, Q0.25, Q0.5, Q0.75, Q0.95] over
/// the last axis: `[B, C, T] -> [B, C, 9]`. Population std; quantiles
/// interpolate linearly at position `p·(T-1)`.
pub fn extract_stats<R: Real>(f: &Tensor<R>) -> Result<Tensor<R>> {
    let (rows, t) = check_input(f)?;
    let mut out = Vec::with_capacity(rows * NUM_STATS);
    for row in f.data().chunks_exact(t) {
        let (s, _) = row_stats(row, &argsort(row));
        out.extend(s.iter().map(|&v| R::of_f64(v)));
    }
    let (b, c) = (f.shape()[0], f.shape()[1]);
    Ok(Tensor::new(&[b, c, NUM_STATS], out)?)
}

/// Differentiable [`extract_stats`]. Min, max and quantiles route gradient to
/// the order statistics they read; a zero-variance row passes none through std.
pub fn stats_op<R: Real>(tape: &Tape<R>, f: &Var<R>) -> Result<Var<R>> {
    let (rows, t) = check_input(f.value())?;
    let x = f.value().clone();
    let mut out = Vec::with_capacity(rows * NUM_STATS);
    let mut orders = Vec::with_capacity(rows);
    let mut moments = Vec::with_capacity(rows);
    for row in x.data().chunks_exact(t) {
        let order = argsort(row);
        let (s, mean) = row_stats(row, &order);
        out.extend(s.iter().map(|&v| R::of_f64(v)));
        moments.push((mean, s[3]));
        orders.push(order);
    }
    let shape = [x.shape()[0], x.shape()[1], NUM_STATS];
    let value = Tensor::new(&shape, out)?;
    Ok(tape.record(&[f], value, move |g| {
        let mut dx = Buffer::zeros(x.len())?;
        let d = dx.as_mut_slice();
        let inv_n = 1.0 / t as f64;
        for (r, gr) in g.data().chunks_exact(NUM_STATS).enumerate() {
            let base = r * t;
            let order = &orders[r];
            let (mean, std) = moments[r];
            let gr: Vec<f64> = gr.iter().map(|v| v.as_f64()).collect();
            let mut acc = vec![0.0f64; t];
            acc[order[0]] += gr[0];
            acc[order[t - 1]] += gr[1];
            for (k, &p) in QUANTILES.iter().enumerate() {
                let (lo, hi, frac) = quantile_pos(p, t);
                acc[order[lo]] += gr[4 + k] * (1.0 - frac);
                acc[order[hi]] += gr[4 + k] * frac;
            }
            for (i, a) in acc.iter_mut().enumerate() {
                *a += gr[2] * inv_n;
                if std > 0.0 {
                    *a += gr[3] * (x.data()[base + i].as_f64() - mean) * inv_n / std;
                }
                d[base + i] = R::of_f64(*a);
            }
        }
        Ok(vec![Some(Tensor::from_buffer(x.shape(), dx)?)])
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_channel() {
        let f = Tensor::new(&[1, 1, 7], vec![5.0f64; 7]).unwrap();
        assert_eq!(extract_stats(&f).unwrap().data(), &[5.0, 5.0, 5.0, 0.0, 5.0, 5.0, 5.0, 5.0, 5.0]);
    }

    #[test]
    fn single_step_is_allowed() {
        let f = Tensor::new(&[1, 2, 1], vec![3.0f64, -1.0]).unwrap();
        let z = extract_stats(&f).unwrap();
        assert_eq!(&z.data()[9..], &[-1.0, -1.0, -1.0, 0.0, -1.0, -1.0, -1.0, -1.0, -1.0]);
    }

    #[test]
    fn empty_axis_rejected() {
        let f = Tensor::<f64>::zeros(&[1, 1, 0]).unwrap();
        assert!(extract_stats(&f).is_err());
    }
}
