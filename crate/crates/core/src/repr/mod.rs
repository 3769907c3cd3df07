//! Fixed-size summaries of encoder activations, probes trained on them, and
//! classification metrics.

mod export;
mod metrics;
mod probe;
mod stats;

use diffcore::{Real, Tape, Tensor};

use crate::arch::{Eegm2, Tap};
use crate::error::Result;
use crate::params::ParamStore;

pub use export::write_repr_csv;
pub use metrics::{auroc, balanced_accuracy, mean_std};
pub use probe::{
    Features, FitReport, LogisticConfig, LogisticProbe, MlpConfig, MlpHead, MlpProbe, Standardizer,
};
pub use stats::{extract_stats, stats_op, NUM_STATS, QUANTILES, STAT_NAMES};

/// Runs the full model and returns its reconstruction together with the
/// activation at `tap`. The reconstruction is identical to an untapped run.
pub fn tap_encoder<R: Real>(model: &Eegm2, params: &ParamStore<R>, x: &Tensor<R>, tap: Tap) -> Result<(Tensor<R>, Tensor<R>)> {
    let tape = Tape::no_grad();
    let p = params.bind_frozen(&tape);
    let (out, mut caps) = model.forward_with_taps(&tape, &p, &tape.constant(x.clone()), &[tap])?;
    Ok((out.into_value(), caps.pop().expect("one tap requested").into_value()))
}

/// Summary statistics `[B, C_tap, 9]` of the `tap` activation, computed
/// without the decoder, `batch` rows at a time. Results are in f64.
pub fn encode_stats<R: Real>(model: &Eegm2, params: &ParamStore<R>, x: &Tensor<f32>, tap: Tap, batch: usize) -> Result<Tensor<f64>> {
    let (n, c, t) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let batch = batch.max(1);
    let mut out = Vec::new();
    let mut width = 0;
    for start in (0..n).step_by(batch) {
        let b = batch.min(n - start);
        let xb = Tensor::<f32>::new(&[b, c, t], x.data()[start * c * t..(start + b) * c * t].to_vec())?.cast::<R>()?;
        let tape = Tape::no_grad();
        let p = params.bind_frozen(&tape);
        let f = model.tap_features(&tape, &p, &tape.constant(xb), tap)?;
        let z = extract_stats(f.value())?;
        width = z.shape()[1];
        out.extend(z.to_f64_vec());
    }
    Ok(Tensor::new(&[n, width, NUM_STATS], out)?)
}
