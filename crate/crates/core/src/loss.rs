//! Reconstruction objective (temporal L1 plus spectral magnitude MSE) and
//! the channel-averaged MSE metric.

use diffcore::{Real, Tape, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::arch::Variant;
use crate::error::{config_err, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossConfig {
    pub alpha: f64,
    pub beta: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig { alpha: 1.0, beta: 1.0 }
    }
}

impl LossConfig {
    /// Default weights, with the spectral term dropped for the L1-only ablation.
    pub fn for_variant(v: Variant) -> Self {
        if v.spectral_loss() {
            Self::default()
        } else {
            LossConfig { alpha: 1.0, beta: 0.0 }
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.beta >= 0.0 && self.alpha.is_finite() && self.beta.is_finite()) {
            return config_err(format!("loss weights must be finite and non-negative, got {self:?}"));
        }
        if self.alpha + self.beta <= 0.0 {
            return config_err("alpha + beta must be positive");
        }
        Ok(())
    }
}

fn same_shape<R: Real>(op: &str, x: &Var<R>, y: &Var<R>) -> Result<()> {
    if x.shape() != y.shape() {
        return Err(Error::Invalid(format!(
            "{op}: target {:?} and reconstruction {:?} differ in shape",
            x.shape(),
            y.shape()
        )));
    }
    Ok(())
}

/// Mean absolute error over all elements.
pub fn l1_temporal<R: Real>(tape: &Tape<R>, x: &Var<R>, xhat: &Var<R>) -> Result<Var<R>> {
    same_shape("l1", x, xhat)?;
    Ok(tape.mean_all(&tape.abs(&tape.sub(xhat, x)?)?)?)
}

/// Mean over batch, channels and frequency bins of the squared difference
/// of rFFT magnitudes along time.
pub fn spectral_mse<R: Real>(tape: &Tape<R>, x: &Var<R>, xhat: &Var<R>) -> Result<Var<R>> {
    same_shape("spectral", x, xhat)?;
    let mx = tape.rfft_mag(x)?;
    let mh = tape.rfft_mag(xhat)?;
    Ok(tape.mean_all(&tape.square(&tape.sub(&mh, &mx)?)?)?)
}

/// `alpha · L1 + beta · spectral`; a zero weight skips its term entirely.
pub fn reconstruction_loss<R: Real>(tape: &Tape<R>, x: &Var<R>, xhat: &Var<R>, cfg: &LossConfig) -> Result<Var<R>> {
    cfg.validate()?;
    let mut total: Option<Var<R>> = None;
    if cfg.alpha > 0.0 {
        total = Some(tape.scale(&l1_temporal(tape, x, xhat)?, R::of_f64(cfg.alpha))?);
    }
    if cfg.beta > 0.0 {
        let s = tape.scale(&spectral_mse(tape, x, xhat)?, R::of_f64(cfg.beta))?;
        total = Some(match total {
            Some(t) => tape.add(&t, &s)?,
            None => s,
        });
    }
    Ok(total.expect("validated weights"))
}

/// Per-channel MSE over batch and time, averaged across channels with equal weight.
pub fn acmse<R: Real>(x: &Tensor<R>, xhat: &Tensor<R>) -> Result<f64> {
    if x.shape() != xhat.shape() || x.rank() != 3 {
        return Err(Error::Invalid(format!(
            "acmse: need equal [B, C, T] shapes, got {:?} and {:?}",
            x.shape(),
            xhat.shape()
        )));
    }
    let (b, c, t) = (x.dim(0), x.dim(1), x.dim(2));
    if b * c * t == 0 {
        return Err(Error::Invalid("acmse: empty input".into()));
    }
    let mut per_channel = vec![0.0f64; c];
    for (i, (&a, &h)) in x.data().iter().zip(xhat.data()).enumerate() {
        let d = a.as_f64() - h.as_f64();
        per_channel[(i / t) % c] += d * d;
    }
    let n = (b * t) as f64;
    Ok(per_channel.iter().map(|s| s / n).sum::<f64>() / c as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn eval(f: impl Fn(&Tape<f64>, &Var<f64>, &Var<f64>) -> Result<Var<f64>>, x: &[f64], y: &[f64], shape: &[usize]) -> f64 {
        let tape = Tape::no_grad();
        let xv = tape.constant(Tensor::new(shape, x.to_vec()).unwrap());
        let yv = tape.constant(Tensor::new(shape, y.to_vec()).unwrap());
        f(&tape, &xv, &yv).unwrap().value().item().unwrap()
    }

    #[test]
    fn hand_values() {
        assert_eq!(eval(l1_temporal, &[1.0, 2.0], &[0.0, 4.0], &[1, 1, 2]), 1.5);
        let s = eval(spectral_mse, &[1.0; 4], &[0.0; 4], &[1, 1, 4]);
        assert!((s - 16.0 / 3.0).abs() < 1e-12);
        let both = eval(|t, x, y| reconstruction_loss(t, x, y, &LossConfig::default()), &[1.0; 4], &[0.0; 4], &[1, 1, 4]);
        assert!((both - (1.0 + 16.0 / 3.0)).abs() < 1e-12);
    }

    #[test]
    fn sign_flip_is_invisible_to_spectral_term() {
        let x = [0.3, -1.2, 2.0, 0.7, 0.1];
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        assert!(eval(spectral_mse, &x, &neg, &[1, 1, 5]).abs() < 1e-24);
        assert!(eval(l1_temporal, &x, &neg, &[1, 1, 5]) > 0.0);
    }

    #[test]
    fn weights_are_validated() {
        assert!(LossConfig { alpha: 0.0, beta: 0.0 }.validate().is_err());
        assert!(LossConfig { alpha: -1.0, beta: 2.0 }.validate().is_err());
        assert_eq!(LossConfig::for_variant(Variant::S2).beta, 0.0);
    }

    #[test]
    fn acmse_hand_case() {
        let x = Tensor::<f64>::new(&[1, 2, 2], vec![1.0, 2.0, 0.0, 0.0]).unwrap();
        let y = Tensor::new(&[1, 2, 2], vec![1.0, 3.0, 1.0, 1.0]).unwrap();
        assert!((acmse(&x, &y).unwrap() - 0.75).abs() < 1e-15);
    }
}
