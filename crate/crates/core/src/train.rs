//! Compact learning (joint GHA and regressor training), the conventional
//! direct-regression baselines, the dual-solution predictor and evaluation.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::acopf::{self, AcopfError};
use crate::datagen::Dataset;
use crate::gha::{self, GhaError, GhaLrSchedule, GhaState};
use crate::grid::Network;
use crate::ipm::DualSolution;
use crate::linalg::Mat;
use crate::net::{self, adam_step, l1_grad, l1_loss, AdamState, MlpModel, NetError};
use crate::scalar::{cast_vec, to_f64_vec, Real};
use crate::spectra::column_stats;

pub const MODEL_FILE_VERSION: u32 = 1;

/// Weight draws tried before accepting a network with dead hidden units.
const MAX_INIT_DRAWS: usize = 64;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("training set is empty")]
    EmptyDataset,
    #[error("dataset carries no dual vectors")]
    MissingDuals,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("network fingerprint mismatch: model {model}, data {data}")]
    Fingerprint { model: String, data: String },
    #[error("training diverged at epoch {0}")]
    Diverged(usize),
    #[error("model file: {0}")]
    Format(String),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Gha(#[from] GhaError),
    #[error(transparent)]
    Acopf(#[from] AcopfError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    Compact,
    ConvlSmall,
    ConvlLarge,
}

impl TrainMode {
    pub fn label(self) -> &'static str {
        match self {
            TrainMode::Compact => "Compact",
            TrainMode::ConvlSmall => "CONVL-Small",
            TrainMode::ConvlLarge => "CONVL-Large",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainTarget {
    Primal,
    Dual,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub pc_ratio: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub adam_lr: f64,
    pub gha: GhaLrSchedule,
    pub gha_beta: f64,
    pub gha_eps: f64,
    /// Affine layers per network.
    pub n_layers: usize,
    pub seed: u64,
    pub mode: TrainMode,
    pub target: TrainTarget,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            pc_ratio: 0.05,
            batch_size: 32,
            max_epochs: 1000,
            adam_lr: 1e-4,
            gha: GhaLrSchedule::default(),
            gha_beta: 0.9999,
            gha_eps: 1e-8,
            n_layers: net::DEFAULT_LAYERS,
            seed: 0,
            mode: TrainMode::Compact,
            target: TrainTarget::Primal,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Config(m.into()));
        if !(self.pc_ratio > 0.0 && self.pc_ratio <= 1.0) {
            return bad("pc_ratio must lie in (0, 1]");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if self.max_epochs == 0 {
            return bad("max_epochs must be at least 1");
        }
        if !(self.adam_lr > 0.0) {
            return bad("adam_lr must be positive");
        }
        if !(self.gha.gamma_min > 0.0 && self.gha.gamma_min <= self.gha.gamma_init) {
            return bad("need 0 < gha.gamma_min <= gha.gamma_init");
        }
        if !(0.0..1.0).contains(&self.gha_beta) {
            return bad("gha_beta must lie in [0, 1)");
        }
        if !(self.gha_eps >= 0.0) {
            return bad("gha_eps must be nonnegative");
        }
        if self.n_layers == 0 {
            return bad("n_layers must be at least 1");
        }
        Ok(())
    }

    /// Adam rate for epoch `e` (1-based): dropped by 10× once 90% of the
    /// epochs have run.
    pub fn adam_lr_at(&self, epoch: usize) -> f64 {
        let drop_after = (0.9 * self.max_epochs as f64).round() as usize;
        if epoch > drop_after {
            self.adam_lr * 0.1
        } else {
            self.adam_lr
        }
    }
}

/// `max(1, round(ratio·d))`, capped at `d`.
pub fn n_components(d: usize, ratio: f64) -> usize {
    ((ratio * d as f64).round() as usize).clamp(1, d.max(1))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompactDims {
    pub dim_x: usize,
    pub p: usize,
    pub d: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompactModel<T> {
    pub regressor: MlpModel<T>,
    pub pca: GhaState<T>,
    pub dims: CompactDims,
    pub network_fingerprint: String,
}

#[derive(Serialize, Deserialize)]
#[serde(bound = "T: Real")]
struct CompactFile<T> {
    format_version: u32,
    kind: String,
    network_fingerprint: String,
    dims: CompactDims,
    regressor: MlpModel<T>,
    gha_state: GhaState<T>,
}

impl<T: Real> CompactModel<T> {
    /// `√(σ²+ε) ∘ (W·R(x)) + μ`.
    pub fn predict(&self, x: &[T]) -> Result<Vec<T>, TrainError> {
        let z = self.regressor.predict(x)?;
        Ok(self.pca.reconstruct(&z))
    }

    /// Regressor weights plus the `d×p` basis.
    pub fn n_params(&self) -> usize {
        self.regressor.n_params() + self.dims.d * self.dims.p
    }

    pub fn to_json(&self) -> String {
        let file = CompactFile {
            format_version: MODEL_FILE_VERSION,
            kind: "compact".into(),
            network_fingerprint: self.network_fingerprint.clone(),
            dims: self.dims,
            regressor: self.regressor.clone(),
            gha_state: self.pca.clone(),
        };
        serde_json::to_string(&file).expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, TrainError> {
        let f: CompactFile<T> = serde_json::from_str(text).map_err(|e| TrainError::Format(e.to_string()))?;
        if f.format_version != MODEL_FILE_VERSION || f.kind != "compact" {
            return Err(TrainError::Format(format!("expected compact model v{MODEL_FILE_VERSION}")));
        }
        let CompactDims { dim_x, p, d } = f.dims;
        if f.regressor.input_dim() != dim_x || f.regressor.output_dim() != p {
            return Err(TrainError::Format("regressor shape disagrees with dims".into()));
        }
        if f.gha_state.dim() != d || f.gha_state.n_components() != p || f.gha_state.mu.len() != d || f.gha_state.var.len() != d
        {
            return Err(TrainError::Format("basis shape disagrees with dims".into()));
        }
        Ok(Self { regressor: f.regressor, pca: f.gha_state, dims: f.dims, network_fingerprint: f.network_fingerprint })
    }
}

/// Direct regression `x ↦ σ ∘ M(x) + μ`, with optional clamping of a
/// coordinate range at zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct DirectModel<T> {
    pub mode: TrainMode,
    pub target: TrainTarget,
    pub network_fingerprint: String,
    pub net: MlpModel<T>,
    pub y_mean: Vec<T>,
    pub y_scale: Vec<T>,
    pub nonnegative: Option<(usize, usize)>,
}

#[derive(Serialize, Deserialize)]
#[serde(bound = "T: Real")]
struct DirectFile<T> {
    format_version: u32,
    kind: String,
    model: DirectModel<T>,
}

impl<T: Real> DirectModel<T> {
    pub fn predict(&self, x: &[T]) -> Result<Vec<T>, TrainError> {
        let out = self.net.predict(x)?;
        let mut y: Vec<T> = out.iter().zip(&self.y_scale).zip(&self.y_mean).map(|((&o, &s), &m)| o * s + m).collect();
        if let Some((a, b)) = self.nonnegative {
            y[a..b].iter_mut().for_each(|v| *v = v.max(T::zero()));
        }
        Ok(y)
    }

    pub fn n_params(&self) -> usize {
        self.net.n_params()
    }

    pub fn to_json(&self) -> String {
        let file = DirectFile { format_version: MODEL_FILE_VERSION, kind: "direct".into(), model: self.clone() };
        serde_json::to_string(&file).expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, TrainError> {
        let f: DirectFile<T> = serde_json::from_str(text).map_err(|e| TrainError::Format(e.to_string()))?;
        if f.format_version != MODEL_FILE_VERSION || f.kind != "direct" {
            return Err(TrainError::Format(format!("expected direct model v{MODEL_FILE_VERSION}")));
        }
        let m = f.model;
        let d = m.net.output_dim();
        if m.y_mean.len() != d || m.y_scale.len() != d {
            return Err(TrainError::Format("output statistics disagree with the network".into()));
        }
        if m.nonnegative.is_some_and(|(a, b)| a > b || b > d) {
            return Err(TrainError::Format("clamp range out of bounds".into()));
        }
        Ok(m)
    }
}

/// Anything mapping encoded loads to an encoded target vector.
pub trait Predictor: Sync {
    fn predict_f64(&self, x: &[f64]) -> Result<Vec<f64>, TrainError>;
    fn n_params(&self) -> usize;
    fn fingerprint(&self) -> &str;
}

impl<T: Real> Predictor for CompactModel<T> {
    fn predict_f64(&self, x: &[f64]) -> Result<Vec<f64>, TrainError> {
        self.predict(&cast_vec(x)).map(|y| to_f64_vec(&y))
    }

    fn n_params(&self) -> usize {
        CompactModel::n_params(self)
    }

    fn fingerprint(&self) -> &str {
        &self.network_fingerprint
    }
}

impl<T: Real> Predictor for DirectModel<T> {
    fn predict_f64(&self, x: &[f64]) -> Result<Vec<f64>, TrainError> {
        self.predict(&cast_vec(x)).map(|y| to_f64_vec(&y))
    }

    fn n_params(&self) -> usize {
        DirectModel::n_params(self)
    }

    fn fingerprint(&self) -> &str {
        &self.network_fingerprint
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean per-instance L1 loss over the epoch's batches.
    pub loss: f64,
    pub adam_lr: f64,
    pub gha_lr: f64,
}

pub const LOSS_CSV_HEADER: &str = "epoch,loss,adam_lr,gha_lr";

pub fn loss_csv(log: &[EpochLog]) -> String {
    let mut s = String::from(LOSS_CSV_HEADER);
    s.push('\n');
    for e in log {
        s.push_str(&format!("{},{:.10e},{:e},{:e}\n", e.epoch, e.loss, e.adam_lr, e.gha_lr));
    }
    s
}

/// Steps reported to a training observer, in execution order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TrainEvent {
    GhaStep { iter: usize },
    Forward { iter: usize },
    AdamStep { iter: usize },
    Epoch(EpochLog),
}

fn matrix<T: Real>(rows: usize, cols: usize, get: impl Fn(usize) -> Vec<f64>) -> Mat<T> {
    let mut data = Vec::with_capacity(rows * cols);
    for i in 0..rows {
        data.extend(cast_vec::<T>(&get(i)));
    }
    Mat::from_vec(rows, cols, data)
}

fn gather<T: Real>(m: &Mat<T>, rows: &[usize]) -> Mat<T> {
    let mut data = Vec::with_capacity(rows.len() * m.cols());
    for &r in rows {
        data.extend_from_slice(m.row(r));
    }
    Mat::from_vec(rows.len(), m.cols(), data)
}

/// Seeded per-epoch shuffles of `0..n` cut into batches of at most `b`.
struct Batches {
    rng: ChaCha8Rng,
    order: Vec<usize>,
    b: usize,
}

impl Batches {
    fn new(n: usize, b: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(1);
        Self { rng, order: (0..n).collect(), b }
    }

    fn epoch(&mut self) -> Vec<Vec<usize>> {
        self.order.shuffle(&mut self.rng);
        self.order.chunks(self.b).map(<[usize]>::to_vec).collect()
    }
}

fn check_training_set(ds: &Dataset, cfg: &TrainConfig) -> Result<(), TrainError> {
    cfg.validate()?;
    if ds.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    ds.check_dims().map_err(|e| TrainError::Format(e.to_string()))
}

/// Joint GHA and regressor training; see [`train_compact_observed`].
pub fn train_compact<T: Real>(ds: &Dataset, cfg: &TrainConfig) -> Result<CompactModel<T>, TrainError> {
    train_compact_observed(ds, cfg, |_| {})
}

/// Per batch: GHA step on the targets, forward pass, reconstruction
/// `√(σ²+ε)∘(W z) + μ`, batch-mean L1 loss in solution space, Adam step on
/// the regressor. `W` gets no gradient from the loss.
pub fn train_compact_observed<T: Real>(
    ds: &Dataset,
    cfg: &TrainConfig,
    mut observe: impl FnMut(&TrainEvent),
) -> Result<CompactModel<T>, TrainError> {
    if cfg.mode != TrainMode::Compact {
        return Err(TrainError::Config(format!("train_compact needs mode compact, got {:?}", cfg.mode)));
    }
    if cfg.target != TrainTarget::Primal {
        return Err(TrainError::Config("compact models predict primal solutions".into()));
    }
    check_training_set(ds, cfg)?;
    let (n, dim_x, d) = (ds.len(), ds.header.dim_x, ds.header.dim_y);
    let p = n_components(d, cfg.pc_ratio);
    let x: Mat<T> = matrix(n, dim_x, |i| ds.records[i].x.clone());
    let y: Mat<T> = matrix(n, d, |i| ds.records[i].y.clone());

    let regressor = MlpModel::<T>::new_live(&net::layer_dims(dim_x, p, p, cfg.n_layers), cfg.seed, &x, MAX_INIT_DRAWS)?;
    let mut regressor = regressor;
    let w0 = gha::init_w::<T>(d, p, cfg.seed.wrapping_add(1))?;
    let mut pca = GhaState::new(w0, T::of(cfg.gha_beta), T::of(cfg.gha_eps));
    let mut adam = AdamState::<T>::new(regressor.n_params(), cfg.adam_lr);
    let mut batches = Batches::new(n, cfg.batch_size, cfg.seed);
    let mut grad = vec![T::zero(); regressor.n_params()];
    let mut iter = 0;

    for epoch in 1..=cfg.max_epochs {
        let gamma = gha::lr(epoch, &cfg.gha);
        adam.lr = cfg.adam_lr_at(epoch);
        let mut loss_sum = 0.0;
        let plan = batches.epoch();
        for rows in &plan {
            let b = rows.len();
            gha::gha_step(&gather(&y, rows), &mut pca, T::of(gamma))?;
            observe(&TrainEvent::GhaStep { iter });
            let scale = pca.scale();
            grad.iter_mut().for_each(|g| *g = T::zero());
            let mut batch_loss = T::zero();
            observe(&TrainEvent::Forward { iter });
            for &r in rows {
                let (z, cache) = regressor.forward(x.row(r))?;
                let y_hat = pca.reconstruct(&z);
                batch_loss += l1_loss(&y_hat, y.row(r));
                let mut g_y = l1_grad(&y_hat, y.row(r), b);
                g_y.iter_mut().zip(&scale).for_each(|(g, &s)| *g *= s);
                let g_z = pca.w.t_matvec(&g_y);
                regressor.backward_into(&cache, &g_z, &mut grad);
            }
            adam_step(&mut regressor.params, &grad, &mut adam)?;
            observe(&TrainEvent::AdamStep { iter });
            loss_sum += batch_loss.as_f64() / b as f64;
            iter += 1;
        }
        let loss = loss_sum / plan.len() as f64;
        if !loss.is_finite() || !pca.is_finite() || !regressor.is_finite() {
            return Err(TrainError::Diverged(epoch));
        }
        observe(&TrainEvent::Epoch(EpochLog { epoch, loss, adam_lr: adam.lr, gha_lr: gamma }));
    }
    Ok(CompactModel { regressor, pca, dims: CompactDims { dim_x, p, d }, network_fingerprint: ds.header.network_fingerprint.clone() })
}

/// CONVL-Small (hidden width `p`) or CONVL-Large (hidden width `d`) direct
/// regression of primal solutions.
pub fn train_conventional<T: Real>(ds: &Dataset, cfg: &TrainConfig) -> Result<DirectModel<T>, TrainError> {
    train_conventional_observed(ds, cfg, |_| {})
}

pub fn train_conventional_observed<T: Real>(
    ds: &Dataset,
    cfg: &TrainConfig,
    observe: impl FnMut(&TrainEvent),
) -> Result<DirectModel<T>, TrainError> {
    if cfg.target != TrainTarget::Primal {
        return Err(TrainError::Config("use train_dual for dual targets".into()));
    }
    check_training_set(ds, cfg)?;
    let d = ds.header.dim_y;
    let hidden = match cfg.mode {
        TrainMode::ConvlSmall => n_components(d, cfg.pc_ratio),
        TrainMode::ConvlLarge => d,
        TrainMode::Compact => {
            return Err(TrainError::Config("train_conventional needs mode convl_small or convl_large".into()))
        }
    };
    let y: Mat<T> = matrix(ds.len(), d, |i| ds.records[i].y.clone());
    fit_direct(ds, &y, hidden, None, cfg, observe)
}

/// Regression onto the flattened dual vector. The hidden width equals the
/// dual dimension for every mode; multipliers of inequalities are clamped
/// at zero on prediction.
pub fn train_dual<T: Real>(ds: &Dataset, net: &Network, cfg: &TrainConfig) -> Result<DirectModel<T>, TrainError> {
    train_dual_observed(ds, net, cfg, |_| {})
}

pub fn train_dual_observed<T: Real>(
    ds: &Dataset,
    net: &Network,
    cfg: &TrainConfig,
    observe: impl FnMut(&TrainEvent),
) -> Result<DirectModel<T>, TrainError> {
    check_training_set(ds, cfg)?;
    check_fingerprint(&net.fingerprint(), ds)?;
    let k = ds.header.dim_dual;
    if k == 0 || ds.records.iter().any(|r| r.dual.len() != k) {
        return Err(TrainError::MissingDuals);
    }
    if k != DualSolution::dim(net) {
        return Err(TrainError::Dimension { expected: DualSolution::dim(net), got: k });
    }
    let duals: Mat<T> = matrix(ds.len(), k, |i| ds.records[i].dual.clone());
    let range = DualSolution::nonnegative_range(net);
    let mut cfg = cfg.clone();
    cfg.target = TrainTarget::Dual;
    fit_direct(ds, &duals, k, Some((range.start, range.end)), &cfg, observe)
}

fn fit_direct<T: Real>(
    ds: &Dataset,
    targets: &Mat<T>,
    hidden: usize,
    nonnegative: Option<(usize, usize)>,
    cfg: &TrainConfig,
    mut observe: impl FnMut(&TrainEvent),
) -> Result<DirectModel<T>, TrainError> {
    let (n, dim_x, k) = (ds.len(), ds.header.dim_x, targets.cols());
    let x: Mat<T> = matrix(n, dim_x, |i| ds.records[i].x.clone());
    let (y_mean, var) = column_stats(targets);
    let eps = T::of(cfg.gha_eps);
    let y_scale: Vec<T> = var.iter().map(|&v| (v + eps).sqrt()).collect();
    let y_scale: Vec<T> = y_scale.into_iter().map(|s| if s > T::zero() { s } else { T::one() }).collect();
    let t = Mat::from_fn(n, k, |i, j| (targets[(i, j)] - y_mean[j]) / y_scale[j]);

    let mut model = MlpModel::<T>::new_live(&net::layer_dims(dim_x, hidden, k, cfg.n_layers), cfg.seed, &x, MAX_INIT_DRAWS)?;
    let mut adam = AdamState::<T>::new(model.n_params(), cfg.adam_lr);
    let mut batches = Batches::new(n, cfg.batch_size, cfg.seed);
    let mut grad = vec![T::zero(); model.n_params()];
    let mut iter = 0;
    for epoch in 1..=cfg.max_epochs {
        adam.lr = cfg.adam_lr_at(epoch);
        let mut loss_sum = 0.0;
        let plan = batches.epoch();
        for rows in &plan {
            let b = rows.len();
            grad.iter_mut().for_each(|g| *g = T::zero());
            let mut batch_loss = T::zero();
            observe(&TrainEvent::Forward { iter });
            for &r in rows {
                let (out, cache) = model.forward(x.row(r))?;
                batch_loss += l1_loss(&out, t.row(r));
                model.backward_into(&cache, &l1_grad(&out, t.row(r), b), &mut grad);
            }
            adam_step(&mut model.params, &grad, &mut adam)?;
            observe(&TrainEvent::AdamStep { iter });
            loss_sum += batch_loss.as_f64() / b as f64;
            iter += 1;
        }
        let loss = loss_sum / plan.len() as f64;
        if !loss.is_finite() || !model.is_finite() {
            return Err(TrainError::Diverged(epoch));
        }
        observe(&TrainEvent::Epoch(EpochLog { epoch, loss, adam_lr: adam.lr, gha_lr: 0.0 }));
    }
    Ok(DirectModel {
        mode: cfg.mode,
        target: cfg.target,
        network_fingerprint: ds.header.network_fingerprint.clone(),
        net: model,
        y_mean,
        y_scale,
        nonnegative,
    })
}

fn check_fingerprint(fp: &str, ds: &Dataset) -> Result<(), TrainError> {
    if fp != ds.header.network_fingerprint {
        return Err(TrainError::Fingerprint { model: fp.into(), data: ds.header.network_fingerprint.clone() });
    }
    Ok(())
}

/// Per-instance quality of one primal prediction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InstanceMetrics {
    pub instance_id: usize,
    pub gap_pct: f64,
    pub max_violation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub instances: usize,
    pub mean_gap_pct: f64,
    pub std_gap_pct: f64,
    /// Mean over instances of the largest constraint violation (p.u.).
    pub mean_max_violation: f64,
    pub per_instance: Vec<InstanceMetrics>,
}

impl MetricsReport {
    pub const CSV_HEADER: &'static str = "method,opt_gap_pct,opt_gap_std_pct,viol_pu,instances";

    pub fn csv_row(&self, method: &str) -> String {
        format!(
            "{method},{:.6},{:.6},{:.6e},{}",
            self.mean_gap_pct, self.std_gap_pct, self.mean_max_violation, self.instances
        )
    }
}

/// Optimality gap and worst violation of the predicted solutions over a
/// test set; instances are evaluated in parallel.
pub fn evaluate<P: Predictor + ?Sized>(model: &P, test: &Dataset, net: &Network) -> Result<MetricsReport, TrainError> {
    check_fingerprint(&net.fingerprint(), test)?;
    check_fingerprint(model.fingerprint(), test)?;
    let per_instance: Vec<InstanceMetrics> = test
        .records
        .par_iter()
        .map(|rec| {
            let inst = acopf::decode_x(net, &rec.x)?;
            let sol = acopf::decode_y(net, &model.predict_f64(&rec.x)?)?;
            let gap_pct = acopf::optimality_gap(acopf::objective(net, &sol)?, rec.objective)?;
            let max_violation = acopf::violations(net, &inst, &sol)?.max_overall;
            Ok(InstanceMetrics { instance_id: rec.instance_id, gap_pct, max_violation })
        })
        .collect::<Result<_, TrainError>>()?;
    Ok(summarize(per_instance))
}

fn summarize(per_instance: Vec<InstanceMetrics>) -> MetricsReport {
    let n = per_instance.len();
    let nf = n.max(1) as f64;
    let mean_gap_pct = per_instance.iter().map(|m| m.gap_pct).sum::<f64>() / nf;
    let var = per_instance.iter().map(|m| (m.gap_pct - mean_gap_pct).powi(2)).sum::<f64>() / nf;
    let mean_max_violation = per_instance.iter().map(|m| m.max_violation).sum::<f64>() / nf;
    MetricsReport { instances: n, mean_gap_pct, std_gap_pct: var.sqrt(), mean_max_violation, per_instance }
}

/// Mean per-instance L1 error of dual predictions, next to the all-zeros
/// baseline on the same records.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DualMetrics {
    pub mean_l1: f64,
    pub zero_baseline_l1: f64,
}

pub fn evaluate_dual<P: Predictor + ?Sized>(model: &P, test: &Dataset) -> Result<DualMetrics, TrainError> {
    check_fingerprint(model.fingerprint(), test)?;
    if test.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let errs: Vec<(f64, f64)> = test
        .records
        .par_iter()
        .map(|rec| {
            if rec.dual.is_empty() {
                return Err(TrainError::MissingDuals);
            }
            let pred = model.predict_f64(&rec.x)?;
            if pred.len() != rec.dual.len() {
                return Err(TrainError::Dimension { expected: rec.dual.len(), got: pred.len() });
            }
            Ok((l1_loss(&pred, &rec.dual), rec.dual.iter().map(|v| v.abs()).sum()))
        })
        .collect::<Result<_, TrainError>>()?;
    let n = errs.len() as f64;
    Ok(DualMetrics {
        mean_l1: errs.iter().map(|e| e.0).sum::<f64>() / n,
        zero_baseline_l1: errs.iter().map(|e| e.1).sum::<f64>() / n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn component_count_rounds_and_clamps() {
        assert_eq!(n_components(38, 0.05), 2);
        assert_eq!(n_components(10, 0.01), 1);
        assert_eq!(n_components(7, 1.0), 7);
        assert_eq!(n_components(30, 0.05), 2);
    }

    #[test]
    fn adam_rate_drops_after_ninety_percent() {
        let cfg = TrainConfig::default();
        assert_eq!(cfg.adam_lr_at(900), 1e-4);
        assert!((cfg.adam_lr_at(901) - 1e-5).abs() < 1e-20);
        let short = TrainConfig { max_epochs: 200, ..cfg };
        assert_eq!(short.adam_lr_at(180), 1e-4);
        assert!(short.adam_lr_at(181) < 1e-4);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        for bad in [
            TrainConfig { pc_ratio: 0.0, ..Default::default() },
            TrainConfig { pc_ratio: 1.5, ..Default::default() },
            TrainConfig { batch_size: 0, ..Default::default() },
            TrainConfig { gha: GhaLrSchedule { gamma_init: 1e-6, gamma_min: 1e-4 }, ..Default::default() },
            TrainConfig { gha_beta: 1.0, ..Default::default() },
        ] {
            assert!(bad.validate().is_err(), "{bad:?}");
        }
        let parsed: TrainConfig = serde_json::from_str(r#"{"mode":"convl_large","batch_size":8}"#).unwrap();
        assert_eq!(parsed.mode, TrainMode::ConvlLarge);
        assert_eq!(parsed.max_epochs, 1000);
    }

    #[test]
    fn batches_cover_every_row_once_per_epoch() {
        let mut b = Batches::new(10, 4, 3);
        for _ in 0..3 {
            let plan = b.epoch();
            assert_eq!(plan.iter().map(Vec::len).collect::<Vec<_>>(), vec![4, 4, 2]);
            let mut all: Vec<usize> = plan.concat();
            all.sort_unstable();
            assert_eq!(all, (0..10).collect::<Vec<_>>());
        }
    }

    #[test]
    fn loss_csv_has_one_row_per_epoch() {
        let log = [EpochLog { epoch: 1, loss: 0.5, adam_lr: 1e-4, gha_lr: 1e-2 }];
        let csv = loss_csv(&log);
        assert!(csv.starts_with(LOSS_CSV_HEADER));
        assert_eq!(csv.lines().count(), 2);
    }
}
