//! Fully-connected ReLU network with hand-written backpropagation, L1 loss
//! and Adam.
//!
//! Parameters live in one flat vector: for each affine layer the weight
//! matrix (`out×in`, row-major) followed by its bias.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::Mat;
use crate::scalar::Real;
use crate::spectra::column_stats;

pub const MODEL_FORMAT_VERSION: u32 = 1;

/// Affine layers in the default architecture (three hidden ReLU layers).
pub const DEFAULT_LAYERS: usize = 4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NetError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("invalid architecture: {0}")]
    Architecture(String),
    #[error("non-finite parameters")]
    NonFinite,
    #[error("model file: {0}")]
    Format(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel<T> {
    pub layer_dims: Vec<usize>,
    pub params: Vec<T>,
    pub x_mean: Vec<T>,
    pub x_std: Vec<T>,
}

/// Activations recorded by [`MlpModel::forward`]; `inputs[l]` is what layer
/// `l` consumed and `pre[l]` its affine output before the activation.
#[derive(Debug, Clone)]
pub struct Cache<T> {
    inputs: Vec<Vec<T>>,
    pre: Vec<Vec<T>>,
}

impl<T> Cache<T> {
    /// Affine outputs of every layer, before activation.
    pub fn pre_activations(&self) -> &[Vec<T>] {
        &self.pre
    }
}

#[derive(Serialize, Deserialize)]
#[serde(bound = "T: Real")]
struct LayerFile<T> {
    rows: usize,
    cols: usize,
    weight: Vec<T>,
    bias: Vec<T>,
}

#[derive(Serialize, Deserialize)]
#[serde(bound = "T: Real")]
struct MlpFile<T> {
    format_version: u32,
    layer_dims: Vec<usize>,
    layers: Vec<LayerFile<T>>,
    x_mean: Vec<T>,
    x_std: Vec<T>,
}

impl<T: Real> MlpModel<T> {
    /// Glorot-uniform weights, zero biases, identity input normalization.
    pub fn new(layer_dims: &[usize], seed: u64) -> Result<Self, NetError> {
        if layer_dims.len() < 2 {
            return Err(NetError::Architecture("need at least one affine layer".into()));
        }
        if layer_dims.contains(&0) {
            return Err(NetError::Architecture(format!("zero width in {layer_dims:?}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(Self::draw(layer_dims, &mut rng))
    }

    /// Like [`new`](Self::new) with input statistics fitted on `x`, redrawing
    /// the weights (from the same seeded stream) until every hidden unit is
    /// active on at least one row of `x`. Gives up after `max_draws`.
    pub fn new_live(layer_dims: &[usize], seed: u64, x: &Mat<T>, max_draws: usize) -> Result<Self, NetError> {
        let first = Self::new(layer_dims, seed)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut model = first;
        for _ in 0..max_draws.max(1) {
            model = Self::draw(layer_dims, &mut rng);
            model.fit_input_stats(x)?;
            if model.dead_units(x)? == 0 {
                return Ok(model);
            }
        }
        Ok(model)
    }

    fn draw(layer_dims: &[usize], rng: &mut ChaCha8Rng) -> Self {
        let mut params = Vec::with_capacity(count_params(layer_dims));
        for w in layer_dims.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for _ in 0..fan_in * fan_out {
                params.push(T::of(rng.random_range(-limit..limit)));
            }
            params.extend(std::iter::repeat_n(T::zero(), fan_out));
        }
        let n_in = layer_dims[0];
        Self { layer_dims: layer_dims.to_vec(), params, x_mean: vec![T::zero(); n_in], x_std: vec![T::one(); n_in] }
    }

    /// Hidden units whose pre-activation is nonpositive on every row of `x`.
    pub fn dead_units(&self, x: &Mat<T>) -> Result<usize, NetError> {
        let hidden = &self.layer_dims[1..self.layer_dims.len() - 1];
        let mut alive: Vec<Vec<bool>> = hidden.iter().map(|&h| vec![false; h]).collect();
        for i in 0..x.rows() {
            let (_, cache) = self.forward(x.row(i))?;
            for (flags, pre) in alive.iter_mut().zip(&cache.pre) {
                for (f, &z) in flags.iter_mut().zip(pre) {
                    *f |= z > T::zero();
                }
            }
        }
        Ok(alive.iter().flatten().filter(|&&a| !a).count())
    }

    pub fn n_layers(&self) -> usize {
        self.layer_dims.len() - 1
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_dims.last().unwrap()
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    /// Stores column means and standard deviations of `x` (one sample per
    /// row); near-constant columns get unit scale.
    pub fn fit_input_stats(&mut self, x: &Mat<T>) -> Result<(), NetError> {
        if x.cols() != self.input_dim() {
            return Err(NetError::Dimension { expected: self.input_dim(), got: x.cols() });
        }
        if x.rows() == 0 {
            return Ok(());
        }
        let (mean, var) = column_stats(x);
        let tiny = T::of(1e-12);
        self.x_std = var.iter().map(|&v| if v.sqrt() > tiny { v.sqrt() } else { T::one() }).collect();
        self.x_mean = mean;
        Ok(())
    }

    /// Offset of layer `l`'s weights in `params`.
    fn offset(&self, l: usize) -> usize {
        self.layer_dims.windows(2).take(l).map(|w| w[0] * w[1] + w[1]).sum()
    }

    pub fn weight(&self, l: usize) -> &[T] {
        let off = self.offset(l);
        &self.params[off..off + self.layer_dims[l] * self.layer_dims[l + 1]]
    }

    pub fn bias(&self, l: usize) -> &[T] {
        let off = self.offset(l) + self.layer_dims[l] * self.layer_dims[l + 1];
        &self.params[off..off + self.layer_dims[l + 1]]
    }

    pub fn forward(&self, x: &[T]) -> Result<(Vec<T>, Cache<T>), NetError> {
        if x.len() != self.input_dim() {
            return Err(NetError::Dimension { expected: self.input_dim(), got: x.len() });
        }
        let mut a: Vec<T> = x.iter().zip(&self.x_mean).zip(&self.x_std).map(|((&v, &m), &s)| (v - m) / s).collect();
        let n = self.n_layers();
        let mut cache = Cache { inputs: Vec::with_capacity(n), pre: Vec::with_capacity(n) };
        let mut off = 0;
        for l in 0..n {
            let (fi, fo) = (self.layer_dims[l], self.layer_dims[l + 1]);
            let w = &self.params[off..off + fi * fo];
            let b = &self.params[off + fi * fo..off + fi * fo + fo];
            off += fi * fo + fo;
            let z: Vec<T> = (0..fo).map(|i| b[i] + crate::linalg::dot(&w[i * fi..(i + 1) * fi], &a)).collect();
            let next = if l + 1 < n { z.iter().map(|&v| v.max(T::zero())).collect() } else { z.clone() };
            cache.inputs.push(std::mem::replace(&mut a, next));
            cache.pre.push(z);
        }
        Ok((a, cache))
    }

    /// Output only.
    pub fn predict(&self, x: &[T]) -> Result<Vec<T>, NetError> {
        self.forward(x).map(|(y, _)| y)
    }

    /// Gradient of `⟨d_out, output⟩` with respect to `params`.
    pub fn backward(&self, cache: &Cache<T>, d_out: &[T]) -> Vec<T> {
        let mut grad = vec![T::zero(); self.params.len()];
        self.backward_into(cache, d_out, &mut grad);
        grad
    }

    /// Like [`backward`](Self::backward) but accumulates into `grad`.
    pub fn backward_into(&self, cache: &Cache<T>, d_out: &[T], grad: &mut [T]) {
        assert_eq!(grad.len(), self.params.len(), "gradient buffer has wrong length");
        assert_eq!(d_out.len(), self.output_dim(), "upstream gradient has wrong length");
        let n = self.n_layers();
        let mut delta = d_out.to_vec();
        let mut end = self.params.len();
        for l in (0..n).rev() {
            let (fi, fo) = (self.layer_dims[l], self.layer_dims[l + 1]);
            if l + 1 < n {
                for (d, &z) in delta.iter_mut().zip(&cache.pre[l]) {
                    if z <= T::zero() {
                        *d = T::zero();
                    }
                }
            }
            let off = end - fi * fo - fo;
            end = off;
            let a = &cache.inputs[l];
            let (gw, gb) = grad[off..off + fi * fo + fo].split_at_mut(fi * fo);
            for i in 0..fo {
                let di = delta[i];
                gb[i] += di;
                if di != T::zero() {
                    crate::linalg::axpy(di, a, &mut gw[i * fi..(i + 1) * fi]);
                }
            }
            if l > 0 {
                let w = &self.params[off..off + fi * fo];
                let mut prev = vec![T::zero(); fi];
                for i in 0..fo {
                    if delta[i] != T::zero() {
                        crate::linalg::axpy(delta[i], &w[i * fi..(i + 1) * fi], &mut prev);
                    }
                }
                delta = prev;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().chain(&self.x_mean).chain(&self.x_std).all(|v| v.is_finite())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.to_file()).expect("model serializes")
    }

    fn to_file(&self) -> MlpFile<T> {
        let layers = (0..self.n_layers())
            .map(|l| LayerFile {
                rows: self.layer_dims[l + 1],
                cols: self.layer_dims[l],
                weight: self.weight(l).to_vec(),
                bias: self.bias(l).to_vec(),
            })
            .collect();
        MlpFile {
            format_version: MODEL_FORMAT_VERSION,
            layer_dims: self.layer_dims.clone(),
            layers,
            x_mean: self.x_mean.clone(),
            x_std: self.x_std.clone(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self, NetError> {
        let file: MlpFile<T> = serde_json::from_str(text).map_err(|e| NetError::Format(e.to_string()))?;
        Self::from_file(file)
    }

    fn from_file(file: MlpFile<T>) -> Result<Self, NetError> {
        if file.format_version != MODEL_FORMAT_VERSION {
            return Err(NetError::Format(format!("unsupported format_version {}", file.format_version)));
        }
        let dims = file.layer_dims;
        if dims.len() < 2 || file.layers.len() != dims.len() - 1 {
            return Err(NetError::Architecture(format!("{} layers for dims {dims:?}", file.layers.len())));
        }
        let mut params = Vec::with_capacity(count_params(&dims));
        for (l, layer) in file.layers.into_iter().enumerate() {
            let (fi, fo) = (dims[l], dims[l + 1]);
            if (layer.rows, layer.cols) != (fo, fi) || layer.weight.len() != fi * fo || layer.bias.len() != fo {
                return Err(NetError::Architecture(format!("layer {l} does not match dims {dims:?}")));
            }
            params.extend(layer.weight);
            params.extend(layer.bias);
        }
        for v in [&file.x_mean, &file.x_std] {
            if v.len() != dims[0] {
                return Err(NetError::Dimension { expected: dims[0], got: v.len() });
            }
        }
        let model = Self { layer_dims: dims, params, x_mean: file.x_mean, x_std: file.x_std };
        if !model.is_finite() {
            return Err(NetError::NonFinite);
        }
        Ok(model)
    }
}

impl<T: Real> Serialize for MlpModel<T> {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.to_file().serialize(s)
    }
}

impl<'de, T: Real> Deserialize<'de> for MlpModel<T> {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let file = MlpFile::<T>::deserialize(d)?;
        Self::from_file(file).map_err(serde::de::Error::custom)
    }
}

/// `Σ (in·out + out)` over the layers.
pub fn count_params(layer_dims: &[usize]) -> usize {
    layer_dims.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

/// `[n_in, h, …, h, n_out]` with `n_layers` affine layers.
pub fn layer_dims(n_in: usize, hidden: usize, n_out: usize, n_layers: usize) -> Vec<usize> {
    let mut dims = vec![n_in];
    dims.extend(std::iter::repeat_n(hidden, n_layers.saturating_sub(1)));
    dims.push(n_out);
    dims
}

/// `Σ |pred − target|`.
pub fn l1_loss<T: Real>(pred: &[T], target: &[T]) -> T {
    pred.iter().zip(target).map(|(&p, &t)| (p - t).abs()).sum()
}

/// Subgradient of `(1/B)·Σ |pred − target|`: `sign(pred − target)/B`, zero at ties.
pub fn l1_grad<T: Real>(pred: &[T], target: &[T], batch: usize) -> Vec<T> {
    let inv = T::one() / T::of(batch as f64);
    pred.iter()
        .zip(target)
        .map(|(&p, &t)| {
            if p > t {
                inv
            } else if p < t {
                -inv
            } else {
                T::zero()
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState<T> {
    pub m: Vec<T>,
    pub v: Vec<T>,
    pub t: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl<T: Real> AdamState<T> {
    pub fn new(n: usize, lr: f64) -> Self {
        Self { m: vec![T::zero(); n], v: vec![T::zero(); n], t: 0, lr, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Bias-corrected Adam update of `params` in place.
pub fn adam_step<T: Real>(params: &mut [T], grad: &[T], st: &mut AdamState<T>) -> Result<(), NetError> {
    if grad.len() != params.len() || st.m.len() != params.len() {
        return Err(NetError::Dimension { expected: params.len(), got: grad.len().min(st.m.len()) });
    }
    st.t += 1;
    let (b1, b2) = (T::of(st.beta1), T::of(st.beta2));
    let c1 = T::one() - T::of(st.beta1.powi(st.t.min(i32::MAX as u64) as i32));
    let c2 = T::one() - T::of(st.beta2.powi(st.t.min(i32::MAX as u64) as i32));
    let (lr, eps) = (T::of(st.lr), T::of(st.eps));
    for (((p, &g), m), v) in params.iter_mut().zip(grad).zip(&mut st.m).zip(&mut st.v) {
        *m = b1 * *m + (T::one() - b1) * g;
        *v = b2 * *v + (T::one() - b2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *p -= lr * m_hat / (v_hat.sqrt() + eps);
    }
    Ok(())
}
