//! Central finite-difference gradient checks.

use crate::error::{Error, Result};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy)]
pub struct CheckOptions {
    pub eps: f64,
    /// Probe at most this many evenly spaced coordinates per parameter.
    pub max_coords: Option<usize>,
}

impl Default for CheckOptions {
    fn default() -> Self {
        CheckOptions {
            eps: 1e-6,
            max_coords: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CheckReport {
    /// max |analytic − numeric| / max(1, |numeric|) over all probed coordinates
    pub max_error: f64,
    /// per-parameter maximum of the same quantity
    pub per_param: Vec<f64>,
    /// (parameter, flat index) of the worst coordinate
    pub worst: Option<(usize, usize)>,
    pub coords_checked: usize,
}

fn eval<F>(f: &F, params: &[Tensor<f64>]) -> Result<f64>
where
    F: Fn(&Tape<f64>, &[Var<f64>]) -> Result<Var<f64>>,
{
    let tape = Tape::no_grad();
    let vars: Vec<_> = params.iter().map(|p| tape.constant(p.clone())).collect();
    let v = f(&tape, &vars)?.value().item()?;
    if !v.is_finite() {
        return Err(Error::NonFinite {
            op: "grad_check",
            position: "objective".into(),
        });
    }
    Ok(v)
}

fn probe_indices(len: usize, max: Option<usize>) -> Vec<usize> {
    match max {
        Some(m) if m < len => (0..m).map(|i| i * len / m).collect(),
        _ => (0..len).collect(),
    }
}

/// Compares reverse-mode gradients of the scalar `f` against central
/// differences at `params`.
pub fn grad_check<F>(f: F, params: &[Tensor<f64>], opts: CheckOptions) -> Result<CheckReport>
where
    F: Fn(&Tape<f64>, &[Var<f64>]) -> Result<Var<f64>>,
{
    let tape = Tape::new();
    let vars: Vec<_> = params.iter().map(|p| tape.leaf(p.clone())).collect();
    let out = f(&tape, &vars)?;
    if !out.value().item()?.is_finite() {
        return Err(Error::NonFinite {
            op: "grad_check",
            position: "objective".into(),
        });
    }
    let grads = tape.backward(&out)?;
    let analytic: Vec<Tensor<f64>> = vars.iter().map(|v| grads.get_or_zeros(v)).collect::<Result<_>>()?;

    let mut report = CheckReport {
        max_error: 0.0,
        per_param: vec![0.0; params.len()],
        worst: None,
        coords_checked: 0,
    };
    let mut probe = params.to_vec();
    for (pi, p) in params.iter().enumerate() {
        for idx in probe_indices(p.len(), opts.max_coords) {
            let mut shifted = p.to_vec();
            let base = shifted[idx];
            shifted[idx] = base + opts.eps;
            probe[pi] = Tensor::new(p.shape(), shifted.clone())?;
            let up = eval(&f, &probe)?;
            shifted[idx] = base - opts.eps;
            probe[pi] = Tensor::new(p.shape(), shifted)?;
            let down = eval(&f, &probe)?;
            let numeric = (up - down) / (2.0 * opts.eps);
            let err = (analytic[pi].data()[idx] - numeric).abs() / numeric.abs().max(1.0);
            report.coords_checked += 1;
            if err > report.per_param[pi] {
                report.per_param[pi] = err;
            }
            if err > report.max_error || report.worst.is_none() {
                report.max_error = report.max_error.max(err);
                if err >= report.max_error {
                    report.worst = Some((pi, idx));
                }
            }
        }
        probe[pi] = p.clone();
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_is_exact() {
        let w = Tensor::new(&[1], vec![3.0]).unwrap();
        let r = grad_check(|t, p| t.sum_all(&t.square(&p[0])?), &[w], CheckOptions::default()).unwrap();
        assert!(r.max_error < 1e-8, "{r:?}");
    }

    #[test]
    fn constant_objective_has_zero_gradients() {
        let w = Tensor::new(&[2], vec![1.0, -1.0]).unwrap();
        let r = grad_check(
            |t, p| {
                let z = t.scale(&p[0], 0.0)?;
                t.sum_all(&z)
            },
            &[w],
            CheckOptions::default(),
        )
        .unwrap();
        assert_eq!(r.max_error, 0.0);
    }

    #[test]
    fn non_finite_objective_is_rejected() {
        let w = Tensor::new(&[1], vec![1000.0]).unwrap();
        let err = grad_check(|t, p| t.sum_all(&t.exp(&p[0])?), &[w], CheckOptions::default()).unwrap_err();
        assert!(matches!(err, Error::NonFinite { .. }));
    }
}
