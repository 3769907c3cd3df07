use diffcore::{Real, Tensor};
use serde::{Deserialize, Serialize};

use crate::arch::checkpoint::Moments;
use crate::error::{config_err, Error, Result};
use crate::params::ParamStore;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Schedule {
    /// warmup from max_lr/10 to max_lr, then cosine decay to max_lr/final_lr_div
    OneCycle,
    /// fixed at init_lr
    Constant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimConfig {
    pub init_lr: f64,
    pub weight_decay: f64,
    pub max_lr: f64,
    pub warmup_frac: f64,
    pub final_lr_div: f64,
    pub betas: (f64, f64),
    pub eps: f64,
    pub schedule: Schedule,
}

impl Default for OptimConfig {
    fn default() -> Self {
        OptimConfig {
            init_lr: 2.5e-4,
            weight_decay: 1e-2,
            max_lr: 5e-4,
            warmup_frac: 0.30,
            final_lr_div: 1e4,
            betas: (0.9, 0.999),
            eps: 1e-8,
            schedule: Schedule::OneCycle,
        }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.warmup_frac > 0.0 && self.warmup_frac < 1.0) {
            return config_err(format!("warmup_frac must lie in (0, 1), got {}", self.warmup_frac));
        }
        if !(self.max_lr > 0.0 && self.init_lr > 0.0 && self.final_lr_div >= 1.0) {
            return config_err("learning rates must be positive and final_lr_div >= 1");
        }
        let (b1, b2) = self.betas;
        if !((0.0..1.0).contains(&b1) && (0.0..1.0).contains(&b2) && self.eps > 0.0 && self.weight_decay >= 0.0) {
            return config_err("betas must lie in [0, 1), eps > 0, weight_decay >= 0");
        }
        Ok(())
    }

    /// Learning rate at `step` of a run with `total` steps.
    pub fn lr(&self, step: usize, total: usize) -> Result<f64> {
        match self.schedule {
            Schedule::OneCycle => onecycle_lr(step, total, self),
            Schedule::Constant if step < total => Ok(self.init_lr),
            Schedule::Constant => Err(Error::Invalid(format!("step {step} outside 0..{total}"))),
        }
    }
}

fn cos_interp(from: f64, to: f64, frac: f64) -> f64 {
    to + (from - to) * (1.0 + (std::f64::consts::PI * frac).cos()) / 2.0
}

/// One-cycle schedule. The peak sits at step `round(warmup_frac · total)`;
/// the last step lands exactly on `max_lr / final_lr_div`.
pub fn onecycle_lr(step: usize, total: usize, cfg: &OptimConfig) -> Result<f64> {
    if step >= total {
        return Err(Error::Invalid(format!("step {step} outside 0..{total}")));
    }
    let start = cfg.max_lr / 10.0;
    let end = cfg.max_lr / cfg.final_lr_div;
    let peak = (cfg.warmup_frac * total as f64).round() as usize;
    if step < peak || (step == peak && peak > 0) {
        return Ok(cos_interp(start, cfg.max_lr, step as f64 / peak as f64));
    }
    let span = (total - 1).saturating_sub(peak);
    if span == 0 {
        return Ok(end);
    }
    Ok(cos_interp(cfg.max_lr, end, (step - peak) as f64 / span as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepOutcome {
    Applied,
    /// a gradient contained NaN or infinity; parameters and moments untouched
    Skipped,
}

/// Decoupled-weight-decay Adam with bias-corrected moments.
pub struct AdamW<R> {
    pub cfg: OptimConfig,
    pub step: u64,
    m: Vec<Tensor<R>>,
    v: Vec<Tensor<R>>,
}

impl<R: Real> AdamW<R> {
    pub fn new(cfg: OptimConfig, params: &ParamStore<R>) -> Result<Self> {
        cfg.validate()?;
        let zeros = || params.values().iter().map(|t| Tensor::zeros(t.shape())).collect::<diffcore::Result<Vec<_>>>();
        Ok(AdamW { cfg, step: 0, m: zeros()?, v: zeros()? })
    }

    pub fn resume(cfg: OptimConfig, params: &ParamStore<R>, step: u64, moments: Moments<R>) -> Result<Self> {
        cfg.validate()?;
        if moments.m.len() != params.len() || moments.v.len() != params.len() {
            return Err(Error::Checkpoint("optimizer moments do not match parameters".into()));
        }
        Ok(AdamW { cfg, step, m: moments.m, v: moments.v })
    }

    pub fn moments(&self) -> Moments<R> {
        Moments { m: self.m.clone(), v: self.v.clone() }
    }

    pub fn update(&mut self, params: &mut ParamStore<R>, grads: &[Tensor<R>], lr: f64) -> Result<StepOutcome> {
        if grads.len() != params.len() {
            return Err(Error::Invalid(format!("{} gradients for {} parameters", grads.len(), params.len())));
        }
        if lr <= 0.0 {
            return Err(Error::Invalid(format!("learning rate must be positive, got {lr}")));
        }
        for (i, g) in grads.iter().enumerate() {
            if g.shape() != params.get(i).shape() {
                return Err(Error::Invalid(format!("gradient shape mismatch for `{}`", params.name(i))));
            }
            if let Some(pos) = g.first_non_finite() {
                log::warn!("skipping optimizer step: non-finite gradient in `{}` at {pos:?}", params.name(i));
                return Ok(StepOutcome::Skipped);
            }
        }
        self.step += 1;
        let (b1, b2) = self.cfg.betas;
        let t = self.step as i32;
        let bc1 = 1.0 - b1.powi(t);
        let bc2 = 1.0 - b2.powi(t);
        let (b1r, b2r) = (R::of_f64(b1), R::of_f64(b2));
        let (one_b1, one_b2) = (R::of_f64(1.0 - b1), R::of_f64(1.0 - b2));
        let decay = R::of_f64(1.0 - lr * self.cfg.weight_decay);
        let step_size = R::of_f64(lr / bc1);
        let bc2_sqrt = R::of_f64(bc2.sqrt());
        let eps = R::of_f64(self.cfg.eps);
        for (i, g) in grads.iter().enumerate() {
            let mut m = self.m[i].to_vec();
            let mut v = self.v[i].to_vec();
            let mut w = params.get(i).to_vec();
            for (((wj, mj), vj), &gj) in w.iter_mut().zip(&mut m).zip(&mut v).zip(g.data()) {
                *wj *= decay;
                *mj = b1r * *mj + one_b1 * gj;
                *vj = b2r * *vj + one_b2 * gj * gj;
                *wj -= step_size * *mj / (vj.sqrt() / bc2_sqrt + eps);
            }
            let shape = g.shape();
            self.m[i] = Tensor::new(shape, m)?;
            self.v[i] = Tensor::new(shape, v)?;
            params.set(i, Tensor::new(shape, w)?)?;
        }
        Ok(StepOutcome::Applied)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(w: f64) -> ParamStore<f64> {
        let mut p = ParamStore::new();
        p.add("w", Tensor::new(&[1], vec![w]).unwrap()).unwrap();
        p
    }

    #[test]
    fn schedule_endpoints() {
        let cfg = OptimConfig::default();
        let total = 1000;
        assert!((onecycle_lr(0, total, &cfg).unwrap() - 5e-5).abs() < 1e-12);
        assert!((onecycle_lr(300, total, &cfg).unwrap() - 5e-4).abs() < 1e-12);
        assert!((onecycle_lr(999, total, &cfg).unwrap() - 5e-8).abs() < 1e-12);
        assert!(onecycle_lr(1000, total, &cfg).is_err());
    }

    #[test]
    fn decay_only_step() {
        let mut p = single(1.0);
        let mut opt = AdamW::new(OptimConfig::default(), &p).unwrap();
        opt.update(&mut p, &[Tensor::zeros(&[1]).unwrap()], 1e-3).unwrap();
        assert!((p.get(0).data()[0] - 0.99999).abs() < 1e-15);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = single(0.0);
        let mut opt = AdamW::new(OptimConfig::default(), &p).unwrap();
        opt.update(&mut p, &[Tensor::ones(&[1]).unwrap()], 1e-3).unwrap();
        let w = p.get(0).data()[0];
        assert!((w - (-1e-3 / (1.0 + 1e-8))).abs() < 1e-18);
        assert!((w - -9.99999995e-4).abs() < 1e-10);
    }

    #[test]
    fn non_finite_gradient_is_skipped() {
        let mut p = single(2.0);
        let mut opt = AdamW::new(OptimConfig::default(), &p).unwrap();
        let out = opt.update(&mut p, &[Tensor::new(&[1], vec![f64::NAN]).unwrap()], 1e-3).unwrap();
        assert_eq!(out, StepOutcome::Skipped);
        assert_eq!(p.get(0).data()[0], 2.0);
        assert_eq!(opt.step, 0);
    }
}
