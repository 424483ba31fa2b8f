//! Streaming principal components by the Generalized Hebbian Algorithm
//! (Sanger's rule) with exponentially averaged input normalization.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::Mat;
use crate::scalar::Real;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GhaError {
    #[error("empty batch")]
    EmptyBatch,
    #[error("batch has {got} columns, state expects {expected}")]
    Dimension { expected: usize, got: usize },
    #[error("batch contains non-finite entries")]
    NonFinite,
    #[error("learning rate must be positive")]
    InvalidRate,
    #[error("cannot extract {p} components from dimension {d}")]
    TooManyComponents { p: usize, d: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GhaState<T> {
    /// `d×p`; column `j` estimates the `j`-th leading component.
    pub w: Mat<T>,
    pub mu: Vec<T>,
    pub var: Vec<T>,
    pub step_count: u64,
    pub beta: T,
    pub eps: T,
}

impl<T: Real> GhaState<T> {
    pub fn new(w: Mat<T>, beta: T, eps: T) -> Self {
        let d = w.rows();
        Self { w, mu: vec![T::zero(); d], var: vec![T::one(); d], step_count: 0, beta, eps }
    }

    pub fn dim(&self) -> usize {
        self.w.rows()
    }

    pub fn n_components(&self) -> usize {
        self.w.cols()
    }

    /// `√(σ² + ε)` per coordinate.
    pub fn scale(&self) -> Vec<T> {
        self.var.iter().map(|&v| (v + self.eps).sqrt()).collect()
    }

    pub fn normalize(&self, y: &[T]) -> Vec<T> {
        y.iter()
            .zip(&self.mu)
            .zip(&self.var)
            .map(|((&v, &m), &s)| (v - m) / (s + self.eps).sqrt())
            .collect()
    }

    /// `√(σ² + ε) ∘ (W z) + μ`.
    pub fn reconstruct(&self, z: &[T]) -> Vec<T> {
        let wz = self.w.matvec(z);
        wz.iter()
            .zip(&self.mu)
            .zip(&self.var)
            .map(|((&v, &m), &s)| (s + self.eps).sqrt() * v + m)
            .collect()
    }

    /// `Wᵀ` applied to the normalized vector.
    pub fn project(&self, y: &[T]) -> Vec<T> {
        self.w.t_matvec(&self.normalize(y))
    }

    pub fn is_finite(&self) -> bool {
        self.w.is_finite()
            && self.mu.iter().chain(&self.var).all(|v| v.is_finite())
            && self.var.iter().all(|&v| v >= T::zero())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GhaLrSchedule {
    pub gamma_init: f64,
    pub gamma_min: f64,
}

impl Default for GhaLrSchedule {
    fn default() -> Self {
        Self { gamma_init: 1e-4, gamma_min: 1e-8 }
    }
}

/// `max(γ_min, γ_init / (0.01·e))` for epoch `e ≥ 1`. Note the value exceeds
/// `γ_init` for `e < 100`.
pub fn lr(epoch: usize, sched: &GhaLrSchedule) -> f64 {
    let e = epoch.max(1) as f64;
    sched.gamma_min.max(sched.gamma_init / (0.01 * e))
}

/// One Sanger update on a batch (`B×d`, one sample per row).
pub fn gha_step<T: Real>(batch: &Mat<T>, state: &mut GhaState<T>, gamma: T) -> Result<(), GhaError> {
    let (b, d) = (batch.rows(), batch.cols());
    if b == 0 {
        return Err(GhaError::EmptyBatch);
    }
    if d != state.dim() {
        return Err(GhaError::Dimension { expected: state.dim(), got: d });
    }
    if !batch.is_finite() {
        return Err(GhaError::NonFinite);
    }
    if !(gamma > T::zero()) {
        return Err(GhaError::InvalidRate);
    }
    let bf = T::of(b as f64);
    let mut mean = vec![T::zero(); d];
    for i in 0..b {
        for (m, &v) in mean.iter_mut().zip(batch.row(i)) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= bf);
    let mut var = vec![T::zero(); d];
    for i in 0..b {
        for ((s, &v), &m) in var.iter_mut().zip(batch.row(i)).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    var.iter_mut().for_each(|s| *s /= bf);

    let beta = if state.step_count == 0 { T::zero() } else { state.beta };
    let one_m = T::one() - beta;
    for j in 0..d {
        state.mu[j] = beta * state.mu[j] + one_m * mean[j];
        state.var[j] = beta * state.var[j] + one_m * var[j];
    }

    let scale = state.scale();
    let yhat = Mat::from_fn(b, d, |i, j| (batch[(i, j)] - state.mu[j]) / scale[j]);
    let z = yhat.matmul(&state.w);
    let mut delta = yhat.t_matmul(&z);
    let mut gram = z.t_matmul(&z);
    let p = gram.rows();
    for i in 0..p {
        for j in i + 1..p {
            gram[(i, j)] = T::zero();
        }
    }
    let correction = state.w.matmul(&gram);
    delta.add_scaled(-T::one(), &correction);
    state.w.add_scaled(gamma / bf, &delta);
    state.step_count += 1;
    Ok(())
}

/// Orthonormalized seeded Gaussian `d×p` matrix.
pub fn init_w<T: Real>(d: usize, p: usize, seed: u64) -> Result<Mat<T>, GhaError> {
    if p > d || p == 0 {
        return Err(GhaError::TooManyComponents { p, d });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let mut w = Mat::from_fn(d, p, |_, _| T::of(rng.sample::<f64, _>(StandardNormal)));
        if w.orthonormalize_columns().is_ok() {
            return Ok(w);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{orthonormality_error, principal_angles};
    use crate::spectra::{fit_exact_pca, PcaOptions};

    #[test]
    fn schedule_examples() {
        let s = GhaLrSchedule::default();
        assert!((lr(100, &s) - 1e-4).abs() < 1e-18);
        assert!((lr(1, &s) - 1e-2).abs() < 1e-16);
        assert_eq!(lr(1_000_000_000, &s), 1e-8);
        assert!((1..2000).all(|e| lr(e + 1, &s) <= lr(e, &s)));
    }

    #[test]
    fn constant_batch_leaves_w_unchanged() {
        let w: Mat<f64> = init_w(4, 2, 1).unwrap();
        let mut st = GhaState::new(w.clone(), 0.9999, 1e-8);
        let batch = Mat::from_fn(8, 4, |_, j| j as f64 * 0.25 + 1.0);
        gha_step(&batch, &mut st, 0.5).unwrap();
        assert_eq!(st.w, w);
        assert_eq!(st.mu, batch.row(0).to_vec());
    }

    #[test]
    fn first_step_takes_batch_mean() {
        let mut st = GhaState::new(init_w::<f64>(3, 1, 0).unwrap(), 0.9999, 1e-8);
        let batch = Mat::from_rows(&[vec![1.0, 2.0, 3.0], vec![3.0, 2.0, 1.0]]);
        gha_step(&batch, &mut st, 1e-3).unwrap();
        assert_eq!(st.mu, vec![2.0, 2.0, 2.0]);
        assert_eq!(st.var, vec![1.0, 0.0, 1.0]);
        gha_step(&batch, &mut st, 1e-3).unwrap();
        assert_eq!(st.step_count, 2);
    }

    #[test]
    fn init_is_orthonormal_and_seeded() {
        let a: Mat<f64> = init_w(10, 4, 3).unwrap();
        assert!(orthonormality_error(&a) < 1e-10);
        assert_eq!(a, init_w(10, 4, 3).unwrap());
        let mut diff = a.clone();
        diff.add_scaled(-1.0, &init_w(10, 4, 4).unwrap());
        assert!(diff.frobenius() > 0.0);
        assert!(init_w::<f64>(3, 4, 0).is_err());
    }

    #[test]
    fn bad_batches_are_rejected() {
        let mut st = GhaState::new(init_w::<f64>(3, 1, 0).unwrap(), 0.9, 1e-8);
        assert_eq!(gha_step(&Mat::zeros(0, 3), &mut st, 0.1), Err(GhaError::EmptyBatch));
        assert!(matches!(gha_step(&Mat::zeros(2, 2), &mut st, 0.1), Err(GhaError::Dimension { .. })));
        let mut nan = Mat::zeros(2, 3);
        nan[(0, 1)] = f64::NAN;
        assert_eq!(gha_step(&nan, &mut st, 0.1), Err(GhaError::NonFinite));
    }

    #[test]
    fn leading_axis_of_anisotropic_stream() {
        // Oracle: exact PCA on the same stream (centering only, stats frozen).
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let data = Mat::from_fn(4000, 2, |_, j| {
            let g: f64 = rng.sample(StandardNormal);
            g * if j == 0 { 2.0 } else { 1.0 }
        });
        let oracle = fit_exact_pca(&data, &PcaOptions { standardize: false, ..Default::default() }).unwrap();
        let w0 = Mat::from_rows(&[vec![0.6], vec![0.8]]);
        let mut st = GhaState::new(w0, 1.0, 0.0);
        st.step_count = 1;
        st.var = vec![1.0, 1.0];
        let sched = GhaLrSchedule { gamma_init: 1e-4, gamma_min: 1e-6 };
        for epoch in 1..=30 {
            let g = lr(epoch, &sched);
            for chunk in 0..(4000 / 40) {
                let batch = Mat::from_fn(40, 2, |i, j| data[(chunk * 40 + i, j)]);
                gha_step(&batch, &mut st, g).unwrap();
            }
        }
        let cos = st.w[(0, 0)].abs() / st.w.frobenius();
        assert!(cos > 1.0 - 1e-2, "cos {cos}");
        assert!(principal_angles(&st.w, &oracle.top(1)).unwrap()[0] < 2e-2);
        assert!((st.w.frobenius() - 1.0).abs() < 1e-2);
    }

    #[test]
    fn exact_eigenvectors_are_a_fixed_point() {
        // Population with known normalized covariance diag(3, 1, 0.5) rotated.
        let n = 3;
        let rot = init_w::<f64>(n, n, 8).unwrap();
        let lam = [3.0, 1.0, 0.5];
        // A symmetric sample whose normalized covariance is exactly rot·diag·rotᵀ:
        // rows ±√(n·λ_k)·rot_k, mean zero, unit variances after rescaling.
        let mut rows = Vec::new();
        for k in 0..n {
            for s in [-1.0, 1.0] {
                rows.push((0..n).map(|i| s * (n as f64 * lam[k]).sqrt() * rot[(i, k)]).collect::<Vec<_>>());
            }
        }
        let batch = Mat::from_rows(&rows);
        let cov_diag: Vec<f64> = (0..n).map(|i| (0..n).map(|k| lam[k] * rot[(i, k)].powi(2)).sum()).collect();
        // Feed already-normalized statistics so the update sees the population.
        let scaled = Mat::from_fn(rows.len(), n, |r, i| batch[(r, i)] / cov_diag[i].sqrt());
        let pca = fit_exact_pca(&scaled, &PcaOptions { standardize: false, eps: 0.0 }).unwrap();
        let w_exact = pca.top(2);
        let mut st = GhaState::new(w_exact.clone(), 1.0, 0.0);
        st.step_count = 1;
        st.var = vec![1.0; n];
        gha_step(&scaled, &mut st, 1.0).unwrap();
        let mut diff = st.w.clone();
        diff.add_scaled(-1.0, &w_exact);
        assert!(diff.frobenius() <= 1e-8, "{}", diff.frobenius());
    }
}
