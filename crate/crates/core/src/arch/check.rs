//! Finite-difference verification of the end-to-end reconstruction gradient.

use diffcore::check::{grad_check, CheckOptions, CheckReport};
use diffcore::Tensor;

use crate::arch::Eegm2;
use crate::error::Result;
use crate::loss::{reconstruction_loss, LossConfig};
use crate::params::{Bound, ParamStore};

/// Checks d loss / d θ for every parameter tensor of `model` on input `x`.
/// `report.per_param` is aligned with `params.names()`.
pub fn check_model_gradients(
    model: &Eegm2,
    params: &ParamStore<f64>,
    x: &Tensor<f64>,
    loss: &LossConfig,
    opts: CheckOptions,
) -> Result<CheckReport> {
    let objective = |tape: &diffcore::Tape<f64>, vars: &[diffcore::Var<f64>]| {
        let p = Bound::from_vars(vars.to_vec());
        let xv = tape.constant(x.clone());
        let run = || -> Result<_> {
            let xhat = model.forward(tape, &p, &xv)?;
            reconstruction_loss(tape, &xv, &xhat, loss)
        };
        run().map_err(|e| diffcore::Error::Invalid(e.to_string()))
    };
    Ok(grad_check(objective, params.values(), opts)?)
}
