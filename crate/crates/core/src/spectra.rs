//! Exact PCA of solution matrices and explained-variance-ratio curves.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{symmetric_eigen, Mat};
use crate::scalar::Real;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpectraError {
    #[error("PCA needs at least 2 samples, got {0}")]
    TooFewSamples(usize),
    #[error("component count {k} outside 1..={d}")]
    InvalidK { k: usize, d: usize },
    #[error("principal-component ratio {0} outside (0, 1]")]
    InvalidRatio(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PcaOptions {
    /// Divide centered columns by `√(var + eps)`; otherwise center only.
    pub standardize: bool,
    pub eps: f64,
}

impl Default for PcaOptions {
    fn default() -> Self {
        Self { standardize: true, eps: 1e-8 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaDecomposition<T> {
    pub mean: Vec<T>,
    /// Per-column divisor applied after centering (all ones when not standardizing).
    pub scale: Vec<T>,
    /// Variances along each component, descending.
    pub eigenvalues: Vec<T>,
    /// `d×d`, orthonormal columns in the order of `eigenvalues`.
    pub components: Mat<T>,
}

impl<T: Real> PcaDecomposition<T> {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn normalize(&self, y: &[T]) -> Vec<T> {
        y.iter().zip(&self.mean).zip(&self.scale).map(|((&v, &m), &s)| (v - m) / s).collect()
    }

    /// First `k` components as a `d×k` matrix.
    pub fn top(&self, k: usize) -> Mat<T> {
        Mat::from_fn(self.dim(), k, |i, j| self.components[(i, j)])
    }
}

/// Column means and biased variances.
pub fn column_stats<T: Real>(y: &Mat<T>) -> (Vec<T>, Vec<T>) {
    let (n, d) = (y.rows(), y.cols());
    let nf = T::of(n as f64);
    let mut mean = vec![T::zero(); d];
    for i in 0..n {
        for (m, &v) in mean.iter_mut().zip(y.row(i)) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= nf);
    let mut var = vec![T::zero(); d];
    for i in 0..n {
        for ((s, &v), &m) in var.iter_mut().zip(y.row(i)).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    var.iter_mut().for_each(|s| *s /= nf);
    (mean, var)
}

/// Exact PCA of the (optionally standardized) columns of `y` (`n×d`).
/// Uses the `n×n` Gram matrix when `n < d`, otherwise the `d×d` covariance;
/// covariance divisor is `n`.
pub fn fit_exact_pca<T: Real>(y: &Mat<T>, opts: &PcaOptions) -> Result<PcaDecomposition<T>, SpectraError> {
    let (n, d) = (y.rows(), y.cols());
    if n < 2 {
        return Err(SpectraError::TooFewSamples(n));
    }
    let (mean, var) = column_stats(y);
    let eps = T::of(opts.eps);
    let scale: Vec<T> =
        if opts.standardize { var.iter().map(|&v| (v + eps).sqrt()).collect() } else { vec![T::one(); d] };
    let z = Mat::from_fn(n, d, |i, j| (y[(i, j)] - mean[j]) / scale[j]);
    let nf = T::of(n as f64);

    let (eigenvalues, components) = if n < d {
        let mut gram = z.matmul(&z.transpose());
        gram.scale(T::one() / nf);
        let e = symmetric_eigen(&gram);
        let mut comps = Mat::zeros(d, d);
        let mut vals = vec![T::zero(); d];
        let cutoff = e.values.first().copied().unwrap_or(T::zero()).max(T::zero()) * T::of(1e-12);
        let mut filled = 0;
        for (k, &lam) in e.values.iter().enumerate() {
            if lam <= cutoff || lam <= T::zero() {
                break;
            }
            let u = e.vectors.col(k);
            let mut v = z.t_matvec(&u);
            let norm = v.iter().map(|&x| x * x).sum::<T>().sqrt();
            v.iter_mut().for_each(|x| *x /= norm);
            comps.set_col(filled, &v);
            vals[filled] = lam;
            filled += 1;
        }
        complete_basis(&mut comps, filled);
        (vals, comps)
    } else {
        let mut cov = z.t_matmul(&z);
        cov.scale(T::one() / nf);
        let e = symmetric_eigen(&cov);
        (e.values, e.vectors)
    };
    Ok(PcaDecomposition { mean, scale, eigenvalues, components })
}

/// Fills columns `filled..d` with an orthonormal complement of the first
/// `filled` columns, drawing candidates from the coordinate axes.
fn complete_basis<T: Real>(m: &mut Mat<T>, mut filled: usize) {
    let d = m.rows();
    for axis in 0..d {
        if filled == d {
            break;
        }
        let mut v = vec![T::zero(); d];
        v[axis] = T::one();
        for _ in 0..2 {
            for j in 0..filled {
                let c = m.col(j);
                let proj: T = c.iter().zip(&v).map(|(&a, &b)| a * b).sum();
                v.iter_mut().zip(&c).for_each(|(x, &cj)| *x -= proj * cj);
            }
        }
        let norm = v.iter().map(|&x| x * x).sum::<T>().sqrt();
        if norm > T::of(1e-6) {
            v.iter_mut().for_each(|x| *x /= norm);
            m.set_col(filled, &v);
            filled += 1;
        }
    }
}

/// `100·Σ_{i<k} λ_i / Σ λ_i`; an all-zero spectrum counts as fully explained.
pub fn explained_variance_ratio<T: Real>(eigenvalues: &[T], k: usize) -> Result<f64, SpectraError> {
    let d = eigenvalues.len();
    if k < 1 || k > d {
        return Err(SpectraError::InvalidK { k, d });
    }
    let clip = |v: &T| v.as_f64().max(0.0);
    let total: f64 = eigenvalues.iter().map(clip).sum();
    if total == 0.0 {
        return Ok(100.0);
    }
    let head: f64 = eigenvalues[..k].iter().map(clip).sum();
    Ok((100.0 * (head / total)).min(100.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvrRow {
    pub ratio: f64,
    pub k: usize,
    pub evr_percent: f64,
}

/// One row per ratio with `k = max(1, ⌊ratio·d⌋)`.
pub fn evr_curve<T: Real>(decomp: &PcaDecomposition<T>, ratios: &[f64]) -> Result<Vec<EvrRow>, SpectraError> {
    let d = decomp.eigenvalues.len();
    ratios
        .iter()
        .map(|&ratio| {
            if !(ratio > 0.0 && ratio <= 1.0) {
                return Err(SpectraError::InvalidRatio(ratio));
            }
            let k = ((ratio * d as f64 + 1e-9).floor() as usize).clamp(1, d);
            Ok(EvrRow { ratio, k, evr_percent: explained_variance_ratio(&decomp.eigenvalues, k)? })
        })
        .collect()
}

pub const EVR_CSV_HEADER: &str = "ratio,k,evr_percent";

pub fn evr_csv(rows: &[EvrRow]) -> String {
    let mut out = format!("{EVR_CSV_HEADER}\n");
    for r in rows {
        out.push_str(&format!("{},{},{:.6}\n", r.ratio, r.k, r.evr_percent));
    }
    out
}
