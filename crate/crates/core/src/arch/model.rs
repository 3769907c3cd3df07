use diffcore::{Real, Tape, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::arch::{ArchConfig, Tap};
use crate::error::{Error, Result};
use crate::params::{Bound, Conv1d, Init, ParamStore};
use crate::ssd::{AttentionBlock, SsdBlock};

/// Sequence mixer at one resolution: a state-space block, or attention for
/// the S5 ablation.
#[derive(Debug, Clone)]
pub enum Mixer {
    Ssd(SsdBlock),
    Attention(AttentionBlock),
}

impl Mixer {
    fn new<R: Real>(init: &mut Init<'_, R>, name: &str, cfg: &ArchConfig, width: usize) -> Result<Self> {
        if cfg.variant.uses_attention() {
            Ok(Mixer::Attention(AttentionBlock::new(init, name, width, cfg.n_heads, width)?))
        } else {
            Ok(Mixer::Ssd(SsdBlock::new(init, name, &cfg.ssd(width))?))
        }
    }

    pub fn forward<R: Real>(&self, tape: &Tape<R>, p: &Bound<R>, x: &Var<R>) -> Result<Var<R>> {
        match self {
            Mixer::Ssd(b) => b.forward(tape, p, x),
            Mixer::Attention(b) => b.forward(tape, p, x),
        }
    }

    pub fn param_count(&self) -> usize {
        match self {
            Mixer::Ssd(b) => b.param_count(),
            Mixer::Attention(b) => b.param_count(),
        }
    }
}

/// Encoder activations kept for the decoder and for taps.
pub struct Encoded<R> {
    /// stage-1 output [B, d1, T]
    pub skip1: Var<R>,
    /// stage-2 output [B, d2, T/pool]
    pub skip2: Var<R>,
    /// stage-3 output [B, d3, T/pool²]
    pub z: Var<R>,
}

impl<R: Real> Encoded<R> {
    pub fn tap(&self, tap: Tap) -> &Var<R> {
        match tap {
            Tap::Enc1 => &self.skip1,
            Tap::Enc2 => &self.skip2,
            Tap::Enc3 => &self.z,
        }
    }
}

/// The U-shaped reconstruction network. Holds parameter handles only; the
/// values live in a [`ParamStore`].
#[derive(Debug, Clone)]
pub struct Eegm2 {
    pub cfg: ArchConfig,
    pub embed: Vec<Conv1d>,
    pub enc1_proj: Conv1d,
    pub enc1_block: Mixer,
    pub enc2_conv: Conv1d,
    pub enc3_conv: Conv1d,
    pub med_in: Conv1d,
    pub med_block: Mixer,
    pub med_out: Conv1d,
    pub dec2_block: Mixer,
    pub dec2_conv: Conv1d,
    pub dec1_block: Mixer,
    pub dec1_conv: Conv1d,
    pub head: Conv1d,
}

impl Eegm2 {
    /// Builds the network and its freshly initialized parameters.
    pub fn new<R: Real>(cfg: &ArchConfig, seed: u64) -> Result<(Self, ParamStore<R>)> {
        cfg.validate()?;
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut init = Init { store: &mut store, rng: &mut rng };
        let [d1, d2, d3] = cfg.stage_widths;
        let c = cfg.in_channels;
        let embed = if cfg.multiscale() {
            let mut v = Vec::new();
            for (w, k) in cfg.embed_split().into_iter().zip([1, 3, 7]) {
                v.push(Conv1d::new(&mut init, &format!("embed.k{k}"), c, w, k)?);
            }
            v
        } else {
            vec![Conv1d::new(&mut init, "embed.k1", c, d1, 1)?]
        };
        let model = Eegm2 {
            cfg: cfg.clone(),
            embed,
            enc1_proj: Conv1d::new(&mut init, "enc1.proj", d1, d1, 1)?,
            enc1_block: Mixer::new(&mut init, "enc1.block", cfg, d1)?,
            enc2_conv: Conv1d::new(&mut init, "enc2.conv", d1, d2, 3)?,
            enc3_conv: Conv1d::new(&mut init, "enc3.conv", d2, d3, 3)?,
            med_in: Conv1d::new(&mut init, "med.in", d3, d3, 1)?,
            med_block: Mixer::new(&mut init, "med.block", cfg, d3)?,
            med_out: Conv1d::new(&mut init, "med.out", d3, d3, 1)?,
            dec2_block: Mixer::new(&mut init, "dec2.block", cfg, d3)?,
            dec2_conv: Conv1d::new(&mut init, "dec2.conv", d3 + d2, d2, 3)?,
            dec1_block: Mixer::new(&mut init, "dec1.block", cfg, d2)?,
            dec1_conv: Conv1d::new(&mut init, "dec1.conv", d2 + d1, d1, 3)?,
            head: Conv1d::new(&mut init, "head", d1, c, 1)?,
        };
        Ok((model, store))
    }

    pub fn multiscale_embed<R: Real>(&self, tape: &Tape<R>, p: &Bound<R>, x: &Var<R>) -> Result<Var<R>> {
        if x.shape().len() != 3 || x.shape()[1] != self.cfg.in_channels {
            return Err(Error::Invalid(format!(
                "expected input [B, {}, T], got {:?}",
                self.cfg.in_channels,
                x.shape()
            )));
        }
        if self.embed.len() == 1 {
            return self.embed[0].forward(tape, p, x);
        }
        let parts = self
            .embed
            .iter()
            .map(|c| c.forward(tape, p, x))
            .collect::<Result<Vec<_>>>()?;
        let refs: Vec<&Var<R>> = parts.iter().collect();
        Ok(tape.concat(&refs, 1)?)
    }

    /// Embedding and encoder stages up to and including `upto`.
    pub fn encode_until<R: Real>(&self, tape: &Tape<R>, p: &Bound<R>, x: &Var<R>, upto: Tap) -> Result<Vec<Var<R>>> {
        let t = x.shape().get(2).copied().unwrap_or(0);
        let m = self.cfg.length_multiple();
        if t == 0 || t % m != 0 {
            let pad = (m - t % m) % m;
            return Err(Error::Invalid(format!(
                "encoder needs a length divisible by {m}; {t} requires {} more padding steps",
                if t == 0 { m } else { pad }
            )));
        }
        let pool = self.cfg.pool;
        let e = self.multiscale_embed(tape, p, x)?;
        let s1 = self.enc1_block.forward(tape, p, &self.enc1_proj.forward(tape, p, &e)?)?;
        let mut out = vec![s1];
        if upto == Tap::Enc1 {
            return Ok(out);
        }
        let h = tape.silu(&self.enc2_conv.forward(tape, p, &out[0])?)?;
        out.push(tape.max_pool1d(&h, pool, pool)?);
        if upto == Tap::Enc2 {
            return Ok(out);
        }
        let h = tape.silu(&self.enc3_conv.forward(tape, p, &out[1])?)?;
        out.push(tape.max_pool1d(&h, pool, pool)?);
        Ok(out)
    }

    pub fn encoder_forward<R: Real>(&self, tape: &Tape<R>, p: &Bound<R>, x: &Var<R>) -> Result<Encoded<R>> {
        let mut v = self.encode_until(tape, p, x, Tap::Enc3)?;
        let z = v.pop().unwrap();
        let skip2 = v.pop().unwrap();
        let skip1 = v.pop().unwrap();
        Ok(Encoded { skip1, skip2, z })
    }

    pub fn mediator_forward<R: Real>(&self, tape: &Tape<R>, p: &Bound<R>, z: &Var<R>) -> Result<Var<R>> {
        let h = self.med_in.forward(tape, p, z)?;
        let h = self.med_block.forward(tape, p, &h)?;
        self.med_out.forward(tape, p, &h)
    }

    pub fn decoder_forward<R: Real>(&self, tape: &Tape<R>, p: &Bound<R>, z: &Var<R>, skip1: &Var<R>, skip2: &Var<R>) -> Result<Var<R>> {
        let [d1, d2, d3] = self.cfg.stage_widths;
        let (t2, t1) = (skip2.shape()[2], skip1.shape()[2]);
        let zt = z.shape()[2];
        if skip2.shape()[1] != d2 || skip1.shape()[1] != d1 || z.shape()[1] != d3 || t2 != zt * self.cfg.pool || t1 != t2 * self.cfg.pool {
            return Err(Error::Invalid(format!(
                "decoder skips do not mirror the encoder: z {:?}, skip2 {:?}, skip1 {:?}",
                z.shape(),
                skip2.shape(),
                skip1.shape()
            )));
        }
        let h = self.upsample(tape, z, t2)?;
        let h = self.dec2_block.forward(tape, p, &h)?;
        let h = tape.concat(&[&h, skip2], 1)?;
        let h = tape.silu(&self.dec2_conv.forward(tape, p, &h)?)?;
        let h = self.upsample(tape, &h, t1)?;
        let h = self.dec1_block.forward(tape, p, &h)?;
        let h = tape.concat(&[&h, skip1], 1)?;
        let h = tape.silu(&self.dec1_conv.forward(tape, p, &h)?)?;
        self.head.forward(tape, p, &h)
    }

    fn upsample<R: Real>(&self, tape: &Tape<R>, x: &Var<R>, len: usize) -> Result<Var<R>> {
        if x.shape()[2] < 2 {
            // a single step has no slope to interpolate; repeat it
            let parts: Vec<&Var<R>> = std::iter::repeat_n(x, len).collect();
            return Ok(tape.concat(&parts, 2)?);
        }
        Ok(tape.interp_upsample(x, len)?)
    }

    /// Reconstruction with the same shape as `x`. Lengths that are not a
    /// multiple of pool² are zero-padded on the right and cropped after.
    pub fn forward<R: Real>(&self, tape: &Tape<R>, p: &Bound<R>, x: &Var<R>) -> Result<Var<R>> {
        Ok(self.forward_with_taps(tape, p, x, &[])?.0)
    }

    /// Forward pass that also returns the requested encoder activations, in
    /// request order. The reconstruction is unaffected by tapping.
    pub fn forward_with_taps<R: Real>(&self, tape: &Tape<R>, p: &Bound<R>, x: &Var<R>, taps: &[Tap]) -> Result<(Var<R>, Vec<Var<R>>)> {
        let t = x.shape().get(2).copied().unwrap_or(0);
        if t == 0 {
            return Err(Error::Invalid("input has no time steps".into()));
        }
        let padded_len = t.next_multiple_of(self.cfg.length_multiple());
        let xp = if padded_len == t { x.clone() } else { tape.pad_last(x, padded_len)? };
        let enc = self.encoder_forward(tape, p, &xp)?;
        let captured = taps.iter().map(|&tp| enc.tap(tp).clone()).collect();
        let med = self.mediator_forward(tape, p, &enc.z)?;
        let out = self.decoder_forward(tape, p, &med, &enc.skip1, &enc.skip2)?;
        let out = if padded_len == t { out } else { tape.narrow(&out, 0, t)? };
        Ok((out, captured))
    }

    /// Encoder feature map at `tap`, padding the input like [`Self::forward`].
    pub fn tap_features<R: Real>(&self, tape: &Tape<R>, p: &Bound<R>, x: &Var<R>, tap: Tap) -> Result<Var<R>> {
        let t = x.shape().get(2).copied().unwrap_or(0);
        if t == 0 {
            return Err(Error::Invalid("input has no time steps".into()));
        }
        let padded_len = t.next_multiple_of(self.cfg.length_multiple());
        let xp = if padded_len == t { x.clone() } else { tape.pad_last(x, padded_len)? };
        Ok(self.encode_until(tape, p, &xp, tap)?.pop().unwrap())
    }

    /// Convenience inference on a plain tensor.
    pub fn reconstruct<R: Real>(&self, params: &ParamStore<R>, x: &Tensor<R>) -> Result<Tensor<R>> {
        let tape = Tape::no_grad();
        let p = params.bind_frozen(&tape);
        let xv = tape.constant(x.clone());
        Ok(self.forward(&tape, &p, &xv)?.into_value())
    }

    pub fn mixers(&self) -> [&Mixer; 4] {
        [&self.enc1_block, &self.med_block, &self.dec2_block, &self.dec1_block]
    }
}
