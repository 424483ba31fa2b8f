//! Symmetric matrices in envelope (skyline) storage and their `LDLᵀ`
//! factorization without pivoting.
//!
//! Only the lower triangle is stored: row `i` holds columns
//! `first[i]..=i`. Fill during factorization stays inside the envelope, so a
//! bandwidth-reducing ordering makes the cost `O(n·b²)` instead of `O(n³)`.
//! The factorization never pivots; the caller regularizes the matrix
//! (quasi-definite form) and uses the reported [`Inertia`] to decide whether
//! more regularization is needed.

use super::LinalgError;
use crate::scalar::Real;

#[derive(Debug, Clone)]
pub struct EnvelopeMatrix<T> {
    first: Vec<usize>,
    start: Vec<usize>,
    vals: Vec<T>,
}

/// Counts of positive, negative and (numerically) zero pivots.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Inertia {
    pub positive: usize,
    pub negative: usize,
    pub zero: usize,
}

impl<T: Real> EnvelopeMatrix<T> {
    /// Allocates a zero matrix whose envelope covers every `(i, j)` in
    /// `pattern` (either triangle; the diagonal is always included).
    pub fn with_pattern(n: usize, pattern: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let mut first: Vec<usize> = (0..n).collect();
        for (i, j) in pattern {
            let (r, c) = if i >= j { (i, j) } else { (j, i) };
            assert!(r < n, "pattern entry out of range");
            first[r] = first[r].min(c);
        }
        let mut start = Vec::with_capacity(n + 1);
        let mut acc = 0;
        for (i, &f) in first.iter().enumerate() {
            start.push(acc);
            acc += i - f + 1;
        }
        start.push(acc);
        Self { first, start, vals: vec![T::zero(); acc] }
    }

    /// Dense symmetric input (lower triangle read), full envelope.
    pub fn from_dense(a: &super::Mat<T>) -> Self {
        let n = a.rows();
        let mut m = Self::with_pattern(n, (0..n).map(|i| (i, 0)));
        for i in 0..n {
            for j in 0..=i {
                m.set(i, j, a[(i, j)]);
            }
        }
        m
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.first.len()
    }

    /// Number of stored entries.
    pub fn profile(&self) -> usize {
        self.vals.len()
    }

    #[inline]
    fn slot(&self, i: usize, j: usize) -> usize {
        let (r, c) = if i >= j { (i, j) } else { (j, i) };
        debug_assert!(c >= self.first[r], "entry ({r},{c}) outside envelope");
        self.start[r] + c - self.first[r]
    }

    pub fn clear(&mut self) {
        self.vals.iter_mut().for_each(|v| *v = T::zero());
    }

    #[inline]
    pub fn add(&mut self, i: usize, j: usize, v: T) {
        let s = self.slot(i, j);
        self.vals[s] += v;
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: T) {
        let s = self.slot(i, j);
        self.vals[s] = v;
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        let (r, c) = if i >= j { (i, j) } else { (j, i) };
        if c < self.first[r] {
            T::zero()
        } else {
            self.vals[self.slot(r, c)]
        }
    }

    /// `y = A·x` using the symmetric envelope.
    pub fn matvec(&self, x: &[T]) -> Vec<T> {
        let n = self.dim();
        let mut y = vec![T::zero(); n];
        for i in 0..n {
            let f = self.first[i];
            let row = &self.vals[self.start[i]..self.start[i + 1]];
            let mut s = T::zero();
            for (k, &a) in row.iter().enumerate() {
                let j = f + k;
                s += a * x[j];
                if j != i {
                    y[j] += a * x[i];
                }
            }
            y[i] += s;
        }
        y
    }

    /// Factors `A = L·D·Lᵀ`. A pivot is counted as zero when its magnitude
    /// falls below `zero_tol` times the largest diagonal magnitude.
    pub fn factor(&self, zero_tol: T) -> EnvelopeLdl<T> {
        let n = self.dim();
        let mut l = self.vals.clone();
        let mut d = vec![T::zero(); n];
        let diag_scale = (0..n)
            .map(|i| self.vals[self.start[i + 1] - 1].abs())
            .fold(T::zero(), T::max)
            .max(T::min_positive_value());
        let thresh = zero_tol * diag_scale;
        let mut inertia = Inertia::default();
        for i in 0..n {
            let fi = self.first[i];
            let si = self.start[i];
            // Pass 1: row i holds t_ij = L_ij·D_j for j < i.
            for j in fi..i {
                let fj = self.first[j];
                let sj = self.start[j];
                let k0 = fi.max(fj);
                let mut s = T::zero();
                for k in k0..j {
                    s += l[si + k - fi] * l[sj + k - fj];
                }
                l[si + j - fi] -= s;
            }
            // Pass 2: scale by the pivots and form D_i.
            let mut di = l[si + i - fi];
            for j in fi..i {
                let t = l[si + j - fi];
                let lij = if d[j] != T::zero() { t / d[j] } else { T::zero() };
                di -= t * lij;
                l[si + j - fi] = lij;
            }
            if !di.is_finite() || di.abs() <= thresh {
                inertia.zero += 1;
            } else if di > T::zero() {
                inertia.positive += 1;
            } else {
                inertia.negative += 1;
            }
            d[i] = di;
            l[si + i - fi] = T::one();
        }
        EnvelopeLdl { first: self.first.clone(), start: self.start.clone(), l, d, inertia }
    }
}

/// Result of [`EnvelopeMatrix::factor`].
#[derive(Debug, Clone)]
pub struct EnvelopeLdl<T> {
    first: Vec<usize>,
    start: Vec<usize>,
    l: Vec<T>,
    d: Vec<T>,
    inertia: Inertia,
}

impl<T: Real> EnvelopeLdl<T> {
    pub fn inertia(&self) -> Inertia {
        self.inertia
    }

    pub fn pivots(&self) -> &[T] {
        &self.d
    }

    pub fn solve(&self, b: &[T]) -> Result<Vec<T>, LinalgError> {
        let n = self.d.len();
        if b.len() != n {
            return Err(LinalgError::Dimension { expected: n, got: b.len() });
        }
        if self.inertia.zero > 0 {
            let pivot = self.d.iter().position(|v| !v.is_finite() || *v == T::zero()).unwrap_or(0);
            return Err(LinalgError::Singular { pivot });
        }
        let mut x = b.to_vec();
        for i in 0..n {
            let f = self.first[i];
            let row = &self.l[self.start[i]..self.start[i + 1] - 1];
            let mut s = x[i];
            for (k, &lik) in row.iter().enumerate() {
                s -= lik * x[f + k];
            }
            x[i] = s;
        }
        for i in 0..n {
            x[i] /= self.d[i];
        }
        for i in (0..n).rev() {
            let f = self.first[i];
            let xi = x[i];
            let row = &self.l[self.start[i]..self.start[i + 1] - 1];
            for (k, &lik) in row.iter().enumerate() {
                x[f + k] -= lik * xi;
            }
        }
        Ok(x)
    }
}
