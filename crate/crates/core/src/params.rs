//! Named parameter storage shared by every model component.

use std::collections::HashMap;
use std::hash::{Hash, Hasher};

use diffcore::{Real, Tape, Tensor, Var};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub type ParamId = usize;

#[derive(Clone, Default)]
pub struct ParamStore<R> {
    names: Vec<String>,
    values: Vec<Tensor<R>>,
    index: HashMap<String, ParamId>,
}

impl<R: Real> ParamStore<R> {
    pub fn new() -> Self {
        ParamStore {
            names: Vec::new(),
            values: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<R>) -> Result<ParamId> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::Invalid(format!("duplicate parameter `{name}`")));
        }
        let id = self.values.len();
        self.index.insert(name.clone(), id);
        self.names.push(name);
        self.values.push(value);
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<R> {
        &self.values[id]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn values(&self) -> &[Tensor<R>] {
        &self.values
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    /// Replaces a value; the shape must not change.
    pub fn set(&mut self, id: ParamId, value: Tensor<R>) -> Result<()> {
        if value.shape() != self.values[id].shape() {
            return Err(Error::Invalid(format!(
                "parameter `{}` has shape {:?}, got {:?}",
                self.names[id],
                self.values[id].shape(),
                value.shape()
            )));
        }
        self.values[id] = value;
        Ok(())
    }

    /// Total number of scalar parameters.
    pub fn count(&self) -> usize {
        self.values.iter().map(|t| t.len()).sum()
    }

    pub fn count_where(&self, pred: impl Fn(&str) -> bool) -> usize {
        self.names
            .iter()
            .zip(&self.values)
            .filter(|(n, _)| pred(n))
            .map(|(_, t)| t.len())
            .sum()
    }

    pub fn size_bytes(&self) -> usize {
        self.values.iter().map(|t| t.size_bytes()).sum()
    }

    /// Deterministic fingerprint of all names, shapes and value bits.
    pub fn fingerprint(&self) -> u64 {
        let mut h = std::collections::hash_map::DefaultHasher::new();
        for (n, t) in self.names.iter().zip(&self.values) {
            n.hash(&mut h);
            t.shape().hash(&mut h);
            for v in t.data() {
                v.as_f64().to_bits().hash(&mut h);
            }
        }
        h.finish()
    }

    /// Registers every parameter on `tape` as a differentiable leaf.
    pub fn bind(&self, tape: &Tape<R>) -> Bound<R> {
        Bound {
            vars: self.values.iter().map(|t| tape.leaf(t.clone())).collect(),
        }
    }

    /// Registers every parameter as a constant (no gradients).
    pub fn bind_frozen(&self, tape: &Tape<R>) -> Bound<R> {
        Bound {
            vars: self.values.iter().map(|t| tape.constant(t.clone())).collect(),
        }
    }

    pub fn cast<S: Real>(&self) -> Result<ParamStore<S>> {
        Ok(ParamStore {
            names: self.names.clone(),
            values: self.values.iter().map(|t| t.cast()).collect::<diffcore::Result<_>>()?,
            index: self.index.clone(),
        })
    }
}

/// Parameters registered on one tape, indexed like the store.
pub struct Bound<R> {
    vars: Vec<Var<R>>,
}

impl<R: Real> Bound<R> {
    /// Wraps vars already on a tape, in parameter order.
    pub fn from_vars(vars: Vec<Var<R>>) -> Self {
        Bound { vars }
    }

    pub fn var(&self, id: ParamId) -> &Var<R> {
        &self.vars[id]
    }

    pub fn vars(&self) -> &[Var<R>] {
        &self.vars
    }
}

/// Initialization helpers; all draws come from one seeded stream so that a
/// model is a pure function of (config, seed).
pub struct Init<'a, R> {
    pub store: &'a mut ParamStore<R>,
    pub rng: &'a mut ChaCha8Rng,
}

impl<R: Real> Init<'_, R> {
    pub fn uniform(&mut self, name: &str, shape: &[usize], bound: f64) -> Result<ParamId> {
        let n = shape.iter().product();
        let v: Vec<R> = (0..n)
            .map(|_| R::of_f64(self.rng.random_range(-bound..=bound)))
            .collect();
        self.store.add(name, Tensor::new(shape, v)?)
    }

    pub fn constant(&mut self, name: &str, shape: &[usize], value: f64) -> Result<ParamId> {
        self.store.add(name, Tensor::full(shape, R::of_f64(value))?)
    }

    pub fn from_fn(&mut self, name: &str, shape: &[usize], mut f: impl FnMut(&mut ChaCha8Rng) -> f64) -> Result<ParamId> {
        let n = shape.iter().product();
        let v: Vec<R> = (0..n).map(|_| R::of_f64(f(self.rng))).collect();
        self.store.add(name, Tensor::new(shape, v)?)
    }
}

/// Affine map over the trailing dim with fan-in scaled uniform init.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub d_in: usize,
    pub d_out: usize,
}

impl Linear {
    pub fn new<R: Real>(init: &mut Init<'_, R>, name: &str, d_in: usize, d_out: usize, bias: bool) -> Result<Self> {
        let bound = 1.0 / (d_in as f64).sqrt();
        let weight = init.uniform(&format!("{name}.weight"), &[d_out, d_in], bound)?;
        let bias = if bias {
            Some(init.uniform(&format!("{name}.bias"), &[d_out], bound)?)
        } else {
            None
        };
        Ok(Linear { weight, bias, d_in, d_out })
    }

    pub fn forward<R: Real>(&self, tape: &Tape<R>, p: &Bound<R>, x: &Var<R>) -> Result<Var<R>> {
        Ok(tape.linear(x, p.var(self.weight), self.bias.map(|b| p.var(b)))?)
    }

    pub fn param_count(&self) -> usize {
        self.d_in * self.d_out + if self.bias.is_some() { self.d_out } else { 0 }
    }
}

/// Same-padded 1-D convolution over [B, C, T].
#[derive(Debug, Clone)]
pub struct Conv1d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub c_in: usize,
    pub c_out: usize,
    pub kernel: usize,
}

impl Conv1d {
    pub fn new<R: Real>(init: &mut Init<'_, R>, name: &str, c_in: usize, c_out: usize, kernel: usize) -> Result<Self> {
        let bound = 1.0 / ((c_in * kernel) as f64).sqrt();
        let weight = init.uniform(&format!("{name}.weight"), &[c_out, c_in, kernel], bound)?;
        let bias = init.uniform(&format!("{name}.bias"), &[c_out], bound)?;
        Ok(Conv1d { weight, bias, c_in, c_out, kernel })
    }

    pub fn forward<R: Real>(&self, tape: &Tape<R>, p: &Bound<R>, x: &Var<R>) -> Result<Var<R>> {
        Ok(tape.conv1d(x, p.var(self.weight), p.var(self.bias))?)
    }

    pub fn param_count(&self) -> usize {
        self.c_out * self.c_in * self.kernel + self.c_out
    }
}

/// Layer normalization over the trailing dim.
#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub dim: usize,
    pub eps: f64,
}

impl LayerNorm {
    pub fn new<R: Real>(init: &mut Init<'_, R>, name: &str, dim: usize) -> Result<Self> {
        Ok(LayerNorm {
            gamma: init.constant(&format!("{name}.weight"), &[dim], 1.0)?,
            beta: init.constant(&format!("{name}.bias"), &[dim], 0.0)?,
            dim,
            eps: 1e-5,
        })
    }

    pub fn forward<R: Real>(&self, tape: &Tape<R>, p: &Bound<R>, x: &Var<R>) -> Result<Var<R>> {
        Ok(tape.layernorm(x, p.var(self.gamma), p.var(self.beta), R::of_f64(self.eps))?)
    }

    pub fn param_count(&self) -> usize {
        2 * self.dim
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn linear_parameter_count() {
        let mut store = ParamStore::<f32>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut init = Init { store: &mut store, rng: &mut rng };
        let l = Linear::new(&mut init, "fc", 3, 2, true).unwrap();
        assert_eq!(l.param_count(), 8);
        assert_eq!(store.count(), 8);
    }

    #[test]
    fn duplicate_names_rejected() {
        let mut store = ParamStore::<f32>::new();
        store.add("a", Tensor::zeros(&[1]).unwrap()).unwrap();
        assert!(store.add("a", Tensor::zeros(&[1]).unwrap()).is_err());
    }

    #[test]
    fn fingerprint_tracks_values() {
        let mut store = ParamStore::<f64>::new();
        let id = store.add("w", Tensor::zeros(&[2]).unwrap()).unwrap();
        let before = store.fingerprint();
        store.set(id, Tensor::new(&[2], vec![0.0, 1e-300]).unwrap()).unwrap();
        assert_ne!(before, store.fingerprint());
        assert!(store.set(id, Tensor::zeros(&[3]).unwrap()).is_err());
    }
}
