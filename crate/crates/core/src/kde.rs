//! Reduced-coordinate representation of the training set and the Gaussian
//! kernel-density prior built on it.
//!
//! The training points `x_d^j ∈ R^{n_x}` are centered and projected on the
//! principal directions of their empirical covariance, then scaled so the
//! reduced points `η_d^j ∈ R^ν` have zero empirical mean and unit (unbiased)
//! empirical covariance. The prior density over `η` is the Gaussian mixture
//!
//! ```text
//! p(η) = c_ν ζ(η),   ζ(η) = (1/N_d) Σ_j exp(-‖(ŝ/s) η_d^j − η‖² / (2ŝ²))
//! ```
//!
//! where `s` is the Silverman bandwidth and `ŝ = s / sqrt(s² + (N_d−1)/N_d)`
//! is the modified bandwidth that keeps the mixture mean at zero and its
//! covariance at the identity.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Singular values at or below this fraction of the largest are treated as zero.
pub const RANK_TOLERANCE: f64 = 1e-12;

/// Silverman bandwidth `s` and the modified bandwidth `ŝ` for `n_d` points in
/// dimension `nu`.
pub fn bandwidths<T: Real>(n_d: usize, nu: usize) -> (T, T) {
    let n = T::from_count(n_d);
    let d = T::from_count(nu);
    let s = (T::lit(4.0) / (n * (T::lit(2.0) + d))).powf(T::one() / (d + T::lit(4.0)));
    let s_hat = s / (s * s + (n - T::one()) / n).sqrt();
    (s, s_hat)
}

/// Centering and principal-component scaling between physical vectors and
/// reduced coordinates: `x = mean + basis · diag(eigvals)^{1/2} · η`.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizationMap<T: Real> {
    mean: DVector<T>,
    basis: DMatrix<T>,
    eigvals: DVector<T>,
}

impl<T: Real> NormalizationMap<T> {
    /// Fits the map on `raw` (one training point per column) and returns it
    /// together with the reduced training points (one per column).
    ///
    /// `max_nu` caps the reduced dimension; by default every direction with a
    /// nonzero singular value is kept, which is at most `N_d − 1`.
    pub fn fit(raw: &DMatrix<T>, max_nu: Option<usize>) -> Result<(Self, DMatrix<T>)> {
        let (n_x, n_d) = raw.shape();
        if n_d < 2 {
            return Err(Error::DegenerateTrainingSet(format!(
                "need at least 2 points, got {n_d}"
            )));
        }
        if n_x == 0 {
            return Err(Error::DegenerateTrainingSet("points have dimension 0".into()));
        }
        if raw.iter().any(|v| !v.is_finite()) {
            return Err(Error::DegenerateTrainingSet("non-finite coordinate".into()));
        }
        if max_nu == Some(0) {
            return Err(Error::InvalidConfig("reduced dimension must be positive".into()));
        }

        let mean = raw.column_mean();
        let mut centered = raw.clone();
        for mut col in centered.column_iter_mut() {
            col -= &mean;
        }

        let (u, singular_values) = left_singular_pairs(&centered);
        let mut order: Vec<usize> = (0..singular_values.len()).collect();
        order.sort_by(|&a, &b| {
            singular_values[b]
                .partial_cmp(&singular_values[a])
                .unwrap_or(std::cmp::Ordering::Equal)
        });
        let s_max = singular_values[order[0]];
        if !(s_max > T::zero()) {
            return Err(Error::DegenerateTrainingSet("all points are identical".into()));
        }
        let cutoff = s_max * T::lit(RANK_TOLERANCE);
        let mut keep: Vec<usize> = order.into_iter().filter(|&k| singular_values[k] > cutoff).collect();
        keep.truncate((n_d - 1).min(max_nu.unwrap_or(usize::MAX)));
        let nu = keep.len();
        if nu == 0 {
            return Err(Error::DegenerateTrainingSet(
                "all singular values below tolerance".into(),
            ));
        }

        let denom = T::from_count(n_d - 1);
        let mut u_kept = DMatrix::zeros(n_x, nu);
        for (a, &k) in keep.iter().enumerate() {
            u_kept.set_column(a, &u.column(k));
        }

        // Jacobi stops once the columns are orthogonal to about n_x·ε. One
        // eigen-decomposition of the small reduced covariance removes what
        // is left, so the reduced points are white to round-off.
        let projected = u_kept.transpose() * &centered;
        let cov = &projected * projected.transpose() / denom;
        let eig = cov.symmetric_eigen();
        let mut idx: Vec<usize> = (0..nu).collect();
        idx.sort_by(|&a, &b| {
            eig.eigenvalues[b]
                .partial_cmp(&eig.eigenvalues[a])
                .unwrap_or(std::cmp::Ordering::Equal)
        });
        let q = DMatrix::from_fn(nu, nu, |i, j| eig.eigenvectors[(i, idx[j])]);
        let eigvals = DVector::from_fn(nu, |a, _| eig.eigenvalues[idx[a]]);

        let map = NormalizationMap {
            mean,
            basis: u_kept * &q,
            eigvals,
        };
        let mut eta = q.transpose() * projected;
        for (a, mut row) in eta.row_iter_mut().enumerate() {
            row /= map.eigvals[a].sqrt();
        }
        Ok((map, eta))
    }

    /// Rebuilds a map from stored parts, checking shapes and positivity.
    pub fn from_parts(mean: DVector<T>, basis: DMatrix<T>, eigvals: DVector<T>) -> Result<Self> {
        if basis.nrows() != mean.len() || basis.ncols() != eigvals.len() {
            return Err(Error::DimensionMismatch(format!(
                "mean {} / basis {}x{} / eigvals {}",
                mean.len(),
                basis.nrows(),
                basis.ncols(),
                eigvals.len()
            )));
        }
        if eigvals.iter().any(|&k| !(k > T::zero())) {
            return Err(Error::DegenerateTrainingSet("non-positive eigenvalue".into()));
        }
        Ok(NormalizationMap { mean, basis, eigvals })
    }

    pub fn physical_dim(&self) -> usize {
        self.mean.len()
    }

    pub fn reduced_dim(&self) -> usize {
        self.eigvals.len()
    }

    pub fn mean(&self) -> &DVector<T> {
        &self.mean
    }

    pub fn basis(&self) -> &DMatrix<T> {
        &self.basis
    }

    pub fn eigvals(&self) -> &DVector<T> {
        &self.eigvals
    }

    /// `basis · diag(eigvals)^{1/2}`, the linear part of [`reconstruct`](Self::reconstruct).
    pub fn reconstruction_operator(&self) -> DMatrix<T> {
        let mut op = self.basis.clone();
        for (a, mut col) in op.column_iter_mut().enumerate() {
            col *= self.eigvals[a].sqrt();
        }
        op
    }

    pub fn reduce(&self, x: &DVector<T>) -> DVector<T> {
        let mut eta = self.basis.tr_mul(&(x - &self.mean));
        for (a, e) in eta.iter_mut().enumerate() {
            *e /= self.eigvals[a].sqrt();
        }
        eta
    }

    pub fn reconstruct(&self, eta: &DVector<T>) -> DVector<T> {
        let scaled = eta.component_mul(&self.eigvals.map(|k| k.sqrt()));
        &self.mean + &self.basis * scaled
    }
}

/// Rotates column pairs of `a` until they are mutually orthogonal
/// (one-sided Jacobi) and returns the rotated columns together with the
/// accumulated right rotation `V`, so that `a_in V = a_out`.
fn jacobi_orthogonalize<T: Real>(mut a: DMatrix<T>) -> (DMatrix<T>, DMatrix<T>) {
    let (m, n) = a.shape();
    let mut v = DMatrix::identity(n, n);
    let tol = T::default_epsilon() * T::from_count(m.max(1));
    for _sweep in 0..80 {
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let alpha = a.column(p).norm_squared();
                let beta = a.column(q).norm_squared();
                let gamma = a.column(p).dot(&a.column(q));
                if gamma == T::zero() || gamma.abs() <= tol * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (T::lit(2.0) * gamma);
                let sign = if zeta >= T::zero() { T::one() } else { -T::one() };
                let t = sign / (zeta.abs() + (T::one() + zeta * zeta).sqrt());
                let c = T::one() / (T::one() + t * t).sqrt();
                let s = c * t;
                for mat in [&mut a, &mut v] {
                    for i in 0..mat.nrows() {
                        let (xp, xq) = (mat[(i, p)], mat[(i, q)]);
                        mat[(i, p)] = c * xp - s * xq;
                        mat[(i, q)] = s * xp + c * xq;
                    }
                }
            }
        }
        if !rotated {
            break;
        }
    }
    (a, v)
}

/// Left singular vectors (one per column) and singular values of `a`,
/// in no particular order. Columns belonging to a zero singular value are
/// left as zero vectors when `a` is tall.
///
/// The dense SVD of the linear-algebra crate returned inconsistent factors
/// on some rank-deficient tall matrices, so the normalization uses one-sided
/// Jacobi, which also resolves small singular values to full relative
/// accuracy.
fn left_singular_pairs<T: Real>(a: &DMatrix<T>) -> (DMatrix<T>, DVector<T>) {
    let (m, n) = a.shape();
    if m >= n {
        let (mut b, _) = jacobi_orthogonalize(a.clone());
        let sv = DVector::from_fn(n, |k, _| b.column(k).norm());
        for (k, mut col) in b.column_iter_mut().enumerate() {
            if sv[k] > T::zero() {
                col /= sv[k];
            }
        }
        (b, sv)
    } else {
        // a = U Σ Vᵀ, so aᵀ V_t = U_t Σ yields U = V_t directly.
        let (b, v) = jacobi_orthogonalize(a.transpose());
        let sv = DVector::from_fn(m, |k, _| b.column(k).norm());
        (v, sv)
    }
}

/// Gaussian-mixture prior over reduced coordinates.
///
/// Immutable after construction and shared read-only by all sampler chains.
#[derive(Debug, Clone)]
pub struct KdePrior<T: Real> {
    anchors: DMatrix<T>,
    centers: DMatrix<T>,
    s: T,
    s_hat: T,
}

impl<T: Real> KdePrior<T> {
    /// Builds the prior from normalized training points (one per column)
    /// using the Silverman and modified bandwidths.
    pub fn new(eta_d: DMatrix<T>) -> Result<Self> {
        let (nu, n_d) = eta_d.shape();
        if n_d < 2 {
            return Err(Error::DegenerateTrainingSet(format!(
                "need at least 2 points, got {n_d}"
            )));
        }
        let (s, s_hat) = bandwidths(n_d, nu);
        Self::with_bandwidths(eta_d, s, s_hat)
    }

    /// Builds a mixture with explicit bandwidths. Used for unit constructions
    /// (e.g. a single anchor) where the closed-form bandwidths do not apply.
    pub fn with_bandwidths(eta_d: DMatrix<T>, s: T, s_hat: T) -> Result<Self> {
        let (nu, n_d) = eta_d.shape();
        if nu == 0 || n_d == 0 {
            return Err(Error::DegenerateTrainingSet("empty anchor set".into()));
        }
        if !(s > T::zero() && s_hat > T::zero()) {
            return Err(Error::InvalidConfig("bandwidths must be positive".into()));
        }
        if eta_d.iter().any(|v| !v.is_finite()) {
            return Err(Error::DegenerateTrainingSet("non-finite anchor".into()));
        }
        let centers = &eta_d * (s_hat / s);
        Ok(KdePrior {
            anchors: eta_d,
            centers,
            s,
            s_hat,
        })
    }

    pub fn dim(&self) -> usize {
        self.anchors.nrows()
    }

    pub fn n_anchors(&self) -> usize {
        self.anchors.ncols()
    }

    /// The normalized training points `η_d^j`.
    pub fn anchors(&self) -> &DMatrix<T> {
        &self.anchors
    }

    /// Mixture component means `(ŝ/s) η_d^j`.
    pub fn centers(&self) -> &DMatrix<T> {
        &self.centers
    }

    pub fn s(&self) -> T {
        self.s
    }

    pub fn s_hat(&self) -> T {
        self.s_hat
    }

    /// Normalization constant `c_ν = (sqrt(2π) ŝ)^{-ν}`.
    pub fn c_nu(&self) -> T {
        self.log_c_nu().exp()
    }

    pub fn log_c_nu(&self) -> T {
        -T::from_count(self.dim()) * (T::two_pi().sqrt() * self.s_hat).ln()
    }

    fn log_terms(&self, eta: &[T], terms: &mut [T]) -> T {
        let inv = T::one() / (T::lit(2.0) * self.s_hat * self.s_hat);
        let mut max = T::lit(f64::NEG_INFINITY);
        for (j, col) in self.centers.column_iter().enumerate() {
            let mut q = T::zero();
            for (c, e) in col.iter().zip(eta) {
                let d = *c - *e;
                q += d * d;
            }
            let l = -q * inv;
            terms[j] = l;
            if l > max {
                max = l;
            }
        }
        max
    }

    /// `log ζ(η)`, evaluated with log-sum-exp so it stays finite far from
    /// every anchor.
    pub fn log_zeta(&self, eta: &DVector<T>) -> T {
        let mut terms = vec![T::zero(); self.n_anchors()];
        self.log_zeta_with(eta.as_slice(), &mut terms)
    }

    pub fn log_zeta_with(&self, eta: &[T], terms: &mut [T]) -> T {
        let max = self.log_terms(eta, terms);
        let sum = terms.iter().fold(T::zero(), |acc, &l| acc + (l - max).exp());
        max + sum.ln() - T::from_count(self.n_anchors()).ln()
    }

    pub fn zeta(&self, eta: &DVector<T>) -> T {
        self.log_zeta(eta).exp()
    }

    /// `∇ζ(η)/ζ(η)`.
    pub fn grad_log_zeta(&self, eta: &DVector<T>) -> DVector<T> {
        let mut terms = vec![T::zero(); self.n_anchors()];
        let mut out = DVector::zeros(self.dim());
        self.grad_log_zeta_into(eta.as_slice(), &mut terms, out.as_mut_slice());
        out
    }

    /// Allocation-free form of [`grad_log_zeta`](Self::grad_log_zeta);
    /// `terms` must hold `n_anchors()` entries.
    pub fn grad_log_zeta_into(&self, eta: &[T], terms: &mut [T], out: &mut [T]) {
        let max = self.log_terms(eta, terms);
        let mut total = T::zero();
        out.iter_mut().for_each(|o| *o = T::zero());
        for (j, col) in self.centers.column_iter().enumerate() {
            let w = T::exp_weight(terms[j] - max);
            total += w;
            for (o, c) in out.iter_mut().zip(col.iter()) {
                *o += w * *c;
            }
        }
        let inv_h2 = T::one() / (self.s_hat * self.s_hat);
        for (o, e) in out.iter_mut().zip(eta) {
            *o = (*o / total - *e) * inv_h2;
        }
    }

    /// Mean of the mixture density, computed from the stored components.
    pub fn mixture_mean(&self) -> DVector<T> {
        self.centers.column_mean()
    }

    /// Second moment `E{H ⊗ H}` of the mixture density.
    pub fn mixture_second_moment(&self) -> DMatrix<T> {
        let n = T::from_count(self.n_anchors());
        let mut m = &self.centers * self.centers.transpose() / n;
        for a in 0..self.dim() {
            m[(a, a)] += self.s_hat * self.s_hat;
        }
        m
    }

    /// Covariance of the mixture density.
    pub fn mixture_covariance(&self) -> DMatrix<T> {
        let mean = self.mixture_mean();
        self.mixture_second_moment() - &mean * mean.transpose()
    }
}
