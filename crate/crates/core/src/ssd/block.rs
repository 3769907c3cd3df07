use diffcore::{Real, Tape, Tensor, Var};

use crate::error::{Error, Result};
use crate::params::{Bound, Init, LayerNorm, Linear, ParamId, ParamStore};
use crate::ssd::{scan, SsdConfig};

/// `A = exp(-dt · exp(a_log))`.
pub fn decay_factor(dt: f64, a_log: f64) -> f64 {
    (-dt * a_log.exp()).exp()
}

fn inverse_softplus(y: f64) -> f64 {
    y + (-(-y).exp_m1()).ln()
}

/// Per-step recurrence parameters generated from the block input.
pub struct Discretized<R> {
    /// decay factors [B, T, G]
    pub a: Var<R>,
    /// input projections [B, T, N]
    pub b: Var<R>,
    /// readout projections [B, T, N]
    pub c: Var<R>,
    /// step sizes [B, T, G]
    pub dt: Var<R>,
}

#[derive(Debug, Clone)]
pub struct SsdBlock {
    pub cfg: SsdConfig,
    pub norm: LayerNorm,
    pub in_proj: Linear,
    pub b_proj: Linear,
    pub c_proj: Linear,
    pub dt_proj: Linear,
    pub a_log: ParamId,
    pub out_proj: Linear,
}

impl SsdBlock {
    pub fn new<R: Real>(init: &mut Init<'_, R>, name: &str, cfg: &SsdConfig) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.d_model;
        let groups = cfg.decay_groups();
        let norm = LayerNorm::new(init, &format!("{name}.norm"), d)?;
        let in_proj = Linear::new(init, &format!("{name}.in_proj"), d, d, true)?;
        let b_proj = Linear::new(init, &format!("{name}.b_proj"), d, cfg.d_state, false)?;
        let c_proj = Linear::new(init, &format!("{name}.c_proj"), d, cfg.d_state, false)?;
        let bound = 1.0 / (d as f64).sqrt();
        let dt_w = init.uniform(&format!("{name}.dt_proj.weight"), &[groups, d], bound)?;
        let (lo, hi) = (cfg.dt_min.ln(), cfg.dt_max.ln());
        let dt_b = init.from_fn(&format!("{name}.dt_proj.bias"), &[groups], |rng| {
            use rand::Rng;
            inverse_softplus(rng.random_range(lo..hi).exp())
        })?;
        let a_log = init.from_fn(&format!("{name}.a_log"), &[groups], |rng| {
            use rand::Rng;
            rng.random_range(1.0f64..16.0).ln()
        })?;
        let out_proj = Linear::new(init, &format!("{name}.out_proj"), d, d, true)?;
        Ok(SsdBlock {
            cfg: cfg.clone(),
            norm,
            in_proj,
            b_proj,
            c_proj,
            dt_proj: Linear { weight: dt_w, bias: Some(dt_b), d_in: d, d_out: groups },
            a_log,
            out_proj,
        })
    }

    pub fn param_count(&self) -> usize {
        self.norm.param_count()
            + self.in_proj.param_count()
            + self.b_proj.param_count()
            + self.c_proj.param_count()
            + self.dt_proj.param_count()
            + self.cfg.decay_groups()
            + self.out_proj.param_count()
    }

    /// Zeroes the output projection, which turns the block into the identity.
    pub fn zero_output<R: Real>(&self, store: &mut ParamStore<R>) -> Result<()> {
        for id in [Some(self.out_proj.weight), self.out_proj.bias].into_iter().flatten() {
            let shape = store.get(id).shape().to_vec();
            store.set(id, Tensor::zeros(&shape)?)?;
        }
        Ok(())
    }

    /// Step sizes, decays and B/C sequences from activations `u` [B, T, d].
    pub fn discretize<R: Real>(&self, tape: &Tape<R>, p: &Bound<R>, u: &Var<R>) -> Result<Discretized<R>> {
        let b = self.b_proj.forward(tape, p, u)?;
        let c = self.c_proj.forward(tape, p, u)?;
        let dt = tape.softplus(&self.dt_proj.forward(tape, p, u)?)?;
        let rate = tape.exp(p.var(self.a_log))?;
        let a = tape.exp(&tape.neg(&tape.mul_bcast_last(&dt, &rate)?)?)?;
        Ok(Discretized { a, b, c, dt })
    }

    /// `x + W_out(scan(dt ⊙ u)) ` with `u = silu(W_in(norm(xᵀ)))`, on [B, C, T].
    pub fn forward<R: Real>(&self, tape: &Tape<R>, p: &Bound<R>, x: &Var<R>) -> Result<Var<R>> {
        if x.shape().len() != 3 || x.shape()[1] != self.cfg.d_model {
            return Err(Error::Invalid(format!(
                "ssd block expects [B, {}, T], got {:?}",
                self.cfg.d_model,
                x.shape()
            )));
        }
        let xt = tape.transpose_last_two(x)?;
        let h = self.norm.forward(tape, p, &xt)?;
        let u = tape.silu(&self.in_proj.forward(tape, p, &h)?)?;
        let disc = self.discretize(tape, p, &u)?;
        let gated = tape.group_scale(&u, &disc.dt)?;
        let y = scan(tape, &gated, &disc.a, &disc.b, &disc.c, self.cfg.chunk)?;
        let o = self.out_proj.forward(tape, p, &y)?;
        Ok(tape.add(x, &tape.transpose_last_two(&o)?)?)
    }
}
