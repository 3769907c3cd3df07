use diffcore::ops::log_softmax;
use diffcore::{Real, Tape, Tensor, Var};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{Bound, Init, Linear, ParamStore};
use crate::train::{AdamW, OptimConfig, Schedule};

/// Row-major feature matrix `[n, dim]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Features {
    pub n: usize,
    pub dim: usize,
    pub data: Vec<f64>,
}

impl Features {
    pub fn new(n: usize, dim: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n * dim {
            return Err(Error::Invalid(format!("{} values for a {n}x{dim} feature matrix", data.len())));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Invalid("features contain non-finite values".into()));
        }
        Ok(Features { n, dim, data })
    }

    /// Flattens `[B, C, 9]` representations to `[B, 9·C]`.
    pub fn from_repr(z: &Tensor<f64>) -> Result<Self> {
        let n = z.shape().first().copied().unwrap_or(0);
        let dim = if n == 0 { 0 } else { z.len() / n };
        Self::new(n, dim, z.to_vec())
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }
}

/// Per-feature affine map to zero mean and unit variance, fitted on the
/// training split. Constant features are only centered.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    pub fn fit(x: &Features) -> Result<Self> {
        if x.n == 0 {
            return Err(Error::Invalid("cannot standardize an empty feature set".into()));
        }
        let mut mean = vec![0.0; x.dim];
        for i in 0..x.n {
            mean.iter_mut().zip(x.row(i)).for_each(|(m, v)| *m += v);
        }
        mean.iter_mut().for_each(|m| *m /= x.n as f64);
        let mut var = vec![0.0; x.dim];
        for i in 0..x.n {
            for ((s, v), m) in var.iter_mut().zip(x.row(i)).zip(&mean) {
                *s += (v - m).powi(2);
            }
        }
        let scale = var.iter().map(|s| (s / x.n as f64).sqrt()).map(|sd| if sd > 1e-12 { 1.0 / sd } else { 1.0 }).collect();
        Ok(Standardizer { mean, scale })
    }

    pub fn apply(&self, x: &Features) -> Result<Features> {
        if x.dim != self.mean.len() {
            return Err(Error::Invalid(format!("feature width {} differs from the fitted {}", x.dim, self.mean.len())));
        }
        let data = x
            .data
            .chunks_exact(x.dim.max(1))
            .flat_map(|row| row.iter().zip(&self.mean).zip(&self.scale).map(|((v, m), s)| (v - m) * s))
            .collect();
        Features::new(x.n, x.dim, data)
    }
}

fn class_list(y: &[usize], n: usize) -> Result<Vec<usize>> {
    if y.len() != n {
        return Err(Error::Invalid(format!("{} labels for {n} samples", y.len())));
    }
    let mut classes = y.to_vec();
    classes.sort_unstable();
    classes.dedup();
    if classes.len() < 2 {
        return Err(Error::Invalid(format!("probe needs at least 2 classes in the training labels, found {}", classes.len())));
    }
    Ok(classes)
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LogisticConfig {
    pub l2: f64,
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for LogisticConfig {
    fn default() -> Self {
        LogisticConfig { l2: 1e-3, max_iter: 500, tol: 1e-6 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitReport {
    pub iterations: usize,
    /// largest final gradient norm over the one-vs-rest problems
    pub grad_norm: f64,
}

/// Mean logistic loss plus `l2/2 · |w|²` (bias unpenalized) and its gradient.
/// `w` holds the weights followed by the bias.
fn logistic_objective(x: &Features, target: &[f64], w: &[f64], l2: f64) -> (f64, Vec<f64>) {
    let d = x.dim;
    let mut grad = vec![0.0; d + 1];
    let mut loss = 0.0;
    for i in 0..x.n {
        let row = x.row(i);
        let z = w[d] + row.iter().zip(w).map(|(a, b)| a * b).sum::<f64>();
        loss += softplus(z) - target[i] * z;
        let r = sigmoid(z) - target[i];
        grad.iter_mut().zip(row).for_each(|(g, v)| *g += r * v);
        grad[d] += r;
    }
    let inv = 1.0 / x.n as f64;
    grad.iter_mut().for_each(|g| *g *= inv);
    let mut reg = 0.0;
    for (g, wi) in grad[..d].iter_mut().zip(w) {
        *g += l2 * wi;
        reg += wi * wi;
    }
    (loss * inv + 0.5 * l2 * reg, grad)
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Accelerated gradient descent with backtracking and function-value
/// restarts. Deterministic: starts from zero.
fn solve_logistic(x: &Features, target: &[f64], cfg: &LogisticConfig) -> (Vec<f64>, FitReport) {
    let mut w = vec![0.0; x.dim + 1];
    let (mut f_w, mut g_w) = logistic_objective(x, target, &w, cfg.l2);
    let mut v = w.clone();
    let mut t = 1.0f64;
    let mut lip = 1.0f64;
    let mut iterations = 0;
    while iterations < cfg.max_iter && norm(&g_w) >= cfg.tol {
        iterations += 1;
        let (f_v, g_v) = logistic_objective(x, target, &v, cfg.l2);
        let gv2 = g_v.iter().map(|g| g * g).sum::<f64>();
        let (w_new, f_new, g_new) = loop {
            let cand: Vec<f64> = v.iter().zip(&g_v).map(|(a, g)| a - g / lip).collect();
            let (f_c, g_c) = logistic_objective(x, target, &cand, cfg.l2);
            if f_c <= f_v - gv2 / (2.0 * lip) + 1e-15 * f_v.abs() || lip > 1e12 {
                break (cand, f_c, g_c);
            }
            lip *= 2.0;
        };
        if f_new > f_w {
            // momentum overshot: restart from the best point
            v = w.clone();
            t = 1.0;
            continue;
        }
        let t_next = (1.0 + (1.0 + 4.0 * t * t).sqrt()) / 2.0;
        let mom = (t - 1.0) / t_next;
        v = w_new.iter().zip(&w).map(|(a, b)| a + mom * (a - b)).collect();
        t = t_next;
        w = w_new;
        f_w = f_new;
        g_w = g_new;
        lip *= 0.9;
    }
    (w, FitReport { iterations, grad_norm: norm(&g_w) })
}

/// L2-regularized logistic regression, one-vs-rest over the training
/// classes. Binary problems use a single model scoring the larger label.
#[derive(Debug, Clone)]
pub struct LogisticProbe {
    pub scaler: Standardizer,
    pub classes: Vec<usize>,
    pub weights: Vec<Vec<f64>>,
    pub cfg: LogisticConfig,
}

impl LogisticProbe {
    pub fn fit(x: &Features, y: &[usize], cfg: &LogisticConfig) -> Result<(Self, FitReport)> {
        let classes = class_list(y, x.n)?;
        let scaler = Standardizer::fit(x)?;
        let xs = scaler.apply(x)?;
        let positives: Vec<usize> = if classes.len() == 2 { vec![classes[1]] } else { classes.clone() };
        let mut weights = Vec::new();
        let mut report = FitReport { iterations: 0, grad_norm: 0.0 };
        for &c in &positives {
            let target: Vec<f64> = y.iter().map(|&l| f64::from(u8::from(l == c))).collect();
            let (w, r) = solve_logistic(&xs, &target, cfg);
            weights.push(w);
            report.iterations = report.iterations.max(r.iterations);
            report.grad_norm = report.grad_norm.max(r.grad_norm);
        }
        Ok((LogisticProbe { scaler, classes, weights, cfg: cfg.clone() }, report))
    }

    /// Per-model probabilities, `[n][models]`.
    pub fn probabilities(&self, x: &Features) -> Result<Vec<Vec<f64>>> {
        let xs = self.scaler.apply(x)?;
        let d = xs.dim;
        Ok((0..xs.n)
            .map(|i| self.weights.iter().map(|w| sigmoid(w[d] + xs.row(i).iter().zip(w).map(|(a, b)| a * b).sum::<f64>())).collect())
            .collect())
    }

    /// Predicted labels and a score for the larger class (binary) or the
    /// winning class (multi-class).
    pub fn predict(&self, x: &Features) -> Result<(Vec<usize>, Vec<f64>)> {
        let probs = self.probabilities(x)?;
        Ok(probs
            .iter()
            .map(|p| {
                if self.classes.len() == 2 {
                    (self.classes[usize::from(p[0] >= 0.5)], p[0])
                } else {
                    let (k, &s) = p.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).expect("nonempty");
                    (self.classes[k], s)
                }
            })
            .unzip())
    }

    /// Gradient norm of each one-vs-rest objective at the fitted weights.
    pub fn gradient_norms(&self, x: &Features, y: &[usize]) -> Result<Vec<f64>> {
        let xs = self.scaler.apply(x)?;
        let positives: Vec<usize> = if self.classes.len() == 2 { vec![self.classes[1]] } else { self.classes.clone() };
        Ok(positives
            .iter()
            .zip(&self.weights)
            .map(|(&c, w)| {
                let target: Vec<f64> = y.iter().map(|&l| f64::from(u8::from(l == c))).collect();
                norm(&logistic_objective(&xs, &target, w, self.cfg.l2).1)
            })
            .collect())
    }
}

/// Fully connected stack with SiLU between layers and linear logits.
#[derive(Debug, Clone)]
pub struct MlpHead {
    pub layers: Vec<Linear>,
}

impl MlpHead {
    /// `dims` = [input, hidden..., classes].
    pub fn new<R: Real>(init: &mut Init<'_, R>, name: &str, dims: &[usize]) -> Result<Self> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(Error::Config(format!("MLP dims {dims:?} need an input and output width, all positive")));
        }
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(init, &format!("{name}.fc{i}"), w[0], w[1], true))
            .collect::<Result<_>>()?;
        Ok(MlpHead { layers })
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Linear::param_count).sum()
    }

    pub fn forward<R: Real>(&self, tape: &Tape<R>, p: &Bound<R>, x: &Var<R>) -> Result<Var<R>> {
        let mut h = x.clone();
        for (i, l) in self.layers.iter().enumerate() {
            h = l.forward(tape, p, &h)?;
            if i + 1 < self.layers.len() {
                h = tape.silu(&h)?;
            }
        }
        Ok(h)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MlpConfig {
    pub hidden: Vec<usize>,
    pub lr: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for MlpConfig {
    fn default() -> Self {
        MlpConfig { hidden: vec![128, 64], lr: 1e-3, weight_decay: 1e-2, epochs: 100, batch_size: 64, seed: 0 }
    }
}

/// Two-hidden-layer classifier on frozen, standardized features.
pub struct MlpProbe {
    pub scaler: Standardizer,
    pub classes: Vec<usize>,
    pub head: MlpHead,
    pub params: ParamStore<f64>,
}

fn rows_tensor(x: &Features, idx: &[usize]) -> Result<Tensor<f64>> {
    let mut v = Vec::with_capacity(idx.len() * x.dim);
    idx.iter().for_each(|&i| v.extend_from_slice(x.row(i)));
    Ok(Tensor::new(&[idx.len(), x.dim], v)?)
}

impl MlpProbe {
    pub fn fit(x: &Features, y: &[usize], cfg: &MlpConfig) -> Result<Self> {
        let classes = class_list(y, x.n)?;
        if cfg.batch_size == 0 {
            return Err(Error::Config("MLP batch_size must be positive".into()));
        }
        let scaler = Standardizer::fit(x)?;
        let xs = scaler.apply(x)?;
        let targets: Vec<usize> = y.iter().map(|l| classes.binary_search(l).expect("label from class list")).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut params = ParamStore::new();
        let mut dims = vec![xs.dim];
        dims.extend(&cfg.hidden);
        dims.push(classes.len());
        let head = MlpHead::new(&mut Init { store: &mut params, rng: &mut rng }, "probe", &dims)?;
        let ocfg = OptimConfig { init_lr: cfg.lr, weight_decay: cfg.weight_decay, schedule: Schedule::Constant, ..OptimConfig::default() };
        let mut opt = AdamW::new(ocfg, &params)?;
        let mut order: Vec<usize> = (0..xs.n).collect();
        for _ in 0..cfg.epochs {
            order.shuffle(&mut rng);
            for idx in order.chunks(cfg.batch_size) {
                let tape = Tape::new();
                let p = params.bind(&tape);
                let xb = tape.constant(rows_tensor(&xs, idx)?);
                let yb: Vec<usize> = idx.iter().map(|&i| targets[i]).collect();
                let loss = tape.cross_entropy(&head.forward(&tape, &p, &xb)?, &yb)?;
                let grads = tape.backward(&loss)?;
                let g = p.vars().iter().map(|v| grads.get_or_zeros(v)).collect::<diffcore::Result<Vec<_>>>()?;
                opt.update(&mut params, &g, cfg.lr)?;
            }
        }
        Ok(MlpProbe { scaler, classes, head, params })
    }

    /// Class probabilities `[n][classes]`.
    pub fn probabilities(&self, x: &Features) -> Result<Vec<Vec<f64>>> {
        let xs = self.scaler.apply(x)?;
        let tape = Tape::no_grad();
        let p = self.params.bind_frozen(&tape);
        let idx: Vec<usize> = (0..xs.n).collect();
        let logits = self.head.forward(&tape, &p, &tape.constant(rows_tensor(&xs, &idx)?))?;
        let lp = log_softmax(logits.value())?;
        Ok(lp.data().chunks_exact(self.classes.len()).map(|r| r.iter().map(|v| v.exp()).collect()).collect())
    }

    pub fn predict(&self, x: &Features) -> Result<(Vec<usize>, Vec<f64>)> {
        let probs = self.probabilities(x)?;
        Ok(probs
            .iter()
            .map(|p| {
                let (k, &s) = p.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).expect("nonempty");
                (self.classes[k], if self.classes.len() == 2 { p[1] } else { s })
            })
            .unzip())
    }
}
