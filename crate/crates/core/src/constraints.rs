//! Analytic moment constraints and their closed-form tilting oracle.
//!
//! For `h(η) = P η`, where `P` selects some coordinates, tilting the KDE prior
//! by `exp(−⟨λ, h(η)⟩)` keeps it a Gaussian mixture. Component `j` moves to
//! mean `m_j − ŝ² Pᵀλ` and is reweighted by `exp(−⟨λ, P m_j⟩)`. This gives
//! the exact tilted moments against which the sampler and the Newton iteration
//! are checked.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::kde::KdePrior;
use crate::scalar::Real;
use crate::solver::{ConstraintEvaluator, ConstraintSpec};

/// `h(η) = (η_{c_1}, …, η_{c_k})`.
#[derive(Debug, Clone)]
pub struct LinearMoment {
    components: Vec<usize>,
}

impl LinearMoment {
    pub fn new(components: Vec<usize>) -> Self {
        LinearMoment { components }
    }

    pub fn components(&self) -> &[usize] {
        &self.components
    }
}

impl<T: Real> ConstraintEvaluator<T> for LinearMoment {
    fn n_constraints(&self) -> usize {
        self.components.len()
    }

    fn evaluate(&self, eta: &DVector<T>) -> Result<DVector<T>> {
        self.components
            .iter()
            .map(|&c| {
                eta.get(c)
                    .copied()
                    .ok_or_else(|| Error::DimensionMismatch(format!("component {c} outside a {}-vector", eta.len())))
            })
            .collect::<Result<Vec<T>>>()
            .map(DVector::from_vec)
    }
}

fn check_components(components: &[usize], nu: usize) -> Result<()> {
    if components.is_empty() || components.len() > nu || components.iter().any(|&c| c >= nu) {
        return Err(Error::DimensionMismatch(format!(
            "components {components:?} do not select from a {nu}-dimensional prior"
        )));
    }
    Ok(())
}

/// Single-block spec constraining the means of the leading `b.len()`
/// coordinates to `b`.
pub fn linear_moment_spec<T: Real>(prior: &KdePrior<T>, b: DVector<T>) -> Result<ConstraintSpec<T>> {
    let components: Vec<usize> = (0..b.len()).collect();
    check_components(&components, prior.dim())?;
    let k = b.len();
    ConstraintSpec::new(Box::new(LinearMoment::new(components)), vec![k], b)
}

/// Closed-form moments of `P H_λ` under the λ-tilted KDE prior.
#[derive(Debug, Clone)]
pub struct TiltingOracle<T: Real> {
    /// Selected coordinates of the mixture centers, `k × N_d`.
    projected: DMatrix<T>,
    s_hat: T,
}

impl<T: Real> TiltingOracle<T> {
    pub fn new(prior: &KdePrior<T>, components: &[usize]) -> Result<Self> {
        check_components(components, prior.dim())?;
        let centers = prior.centers();
        let projected = DMatrix::from_fn(components.len(), centers.ncols(), |r, j| centers[(components[r], j)]);
        Ok(TiltingOracle {
            projected,
            s_hat: prior.s_hat(),
        })
    }

    /// Oracle for the leading `k` coordinates, matching [`linear_moment_spec`].
    pub fn leading(prior: &KdePrior<T>, k: usize) -> Result<Self> {
        Self::new(prior, &(0..k).collect::<Vec<_>>())
    }

    pub fn dim(&self) -> usize {
        self.projected.nrows()
    }

    /// Mixture weights `π_j(λ) ∝ exp(−⟨λ, P m_j⟩)`.
    pub fn weights(&self, lambda: &DVector<T>) -> DVector<T> {
        let mut logits = -self.projected.tr_mul(lambda);
        let max = logits.max();
        logits.apply(|v| *v = (*v - max).exp());
        let total = logits.sum();
        logits / total
    }

    /// `E{P H_λ} = Σ_j π_j (P m_j − ŝ² λ)`.
    pub fn mean(&self, lambda: &DVector<T>) -> DVector<T> {
        &self.projected * self.weights(lambda) - lambda * (self.s_hat * self.s_hat)
    }

    /// `cov{P H_λ} = ŝ² I + Σ_j π_j P m_j (P m_j)ᵀ − E E'ᵀ`, where `E'` is the
    /// untilted-center mean. Equals minus the Jacobian of [`Self::mean`].
    pub fn covariance(&self, lambda: &DVector<T>) -> DMatrix<T> {
        let w = self.weights(lambda);
        let center_mean = &self.projected * &w;
        let mut cov = DMatrix::identity(self.dim(), self.dim()) * (self.s_hat * self.s_hat);
        for (j, col) in self.projected.column_iter().enumerate() {
            let d = col - &center_mean;
            cov += &d * d.transpose() * w[j];
        }
        cov
    }

    /// Solves `mean(λ) = b` by damped Newton iteration.
    pub fn root(&self, b: &DVector<T>) -> Result<DVector<T>> {
        if b.len() != self.dim() {
            return Err(Error::DimensionMismatch(format!(
                "target has {} entries, oracle has {}",
                b.len(),
                self.dim()
            )));
        }
        let tol = T::lit(1e-13) * (T::one() + b.norm());
        let mut lambda = DVector::zeros(self.dim());
        let mut residual = self.mean(&lambda) - b;
        for _ in 0..200 {
            if residual.norm() <= tol {
                return Ok(lambda);
            }
            let chol = self
                .covariance(&lambda)
                .cholesky()
                .ok_or(Error::SingularHessian { iteration: None })?;
            // mean decreases along λ with Jacobian −cov
            let step = chol.solve(&residual);
            let mut t = T::one();
            loop {
                let trial = &lambda + &step * t;
                let r = self.mean(&trial) - b;
                if r.norm() < residual.norm() || t < T::lit(1e-8) {
                    lambda = trial;
                    residual = r;
                    break;
                }
                t /= T::lit(2.0);
            }
        }
        if residual.norm() <= T::lit(1e-9) * (T::one() + b.norm()) {
            Ok(lambda)
        } else {
            Err(Error::InvalidConfig(
                "tilting oracle did not converge; target may be unreachable".into(),
            ))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn random_prior(nu: usize, n_d: usize, seed: u64) -> KdePrior<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let raw = DMatrix::from_fn(nu, n_d, |_, _| rng.sample::<f64, _>(StandardNormal));
        let (_, eta) = crate::kde::NormalizationMap::fit(&raw, None).unwrap();
        KdePrior::new(eta).unwrap()
    }

    #[test]
    fn untilted_mean_is_zero() {
        let prior = random_prior(3, 12, 1);
        let oracle = TiltingOracle::leading(&prior, 2).unwrap();
        assert!(oracle.mean(&DVector::zeros(2)).amax() < 1e-14);
        // and the untilted covariance is the identity
        assert!((oracle.covariance(&DVector::zeros(2)) - DMatrix::identity(2, 2)).amax() < 1e-12);
    }

    #[test]
    fn single_anchor_tilt_shifts_the_mean() {
        let prior = KdePrior::with_bandwidths(DMatrix::from_column_slice(2, 1, &[0.4, -0.2]), 0.9, 0.6).unwrap();
        let oracle = TiltingOracle::leading(&prior, 2).unwrap();
        let lambda = DVector::from_vec(vec![0.7, -1.1]);
        let m = prior.centers().column(0).into_owned();
        assert_relative_eq!(oracle.mean(&lambda), m - &lambda * 0.36, epsilon = 1e-14);
    }

    #[test]
    fn jacobian_is_minus_covariance() {
        let prior = random_prior(4, 15, 2);
        let oracle = TiltingOracle::new(&prior, &[0, 2]).unwrap();
        let lambda = DVector::from_vec(vec![0.3, -0.8]);
        let h = 1e-6;
        let cov = oracle.covariance(&lambda);
        for k in 0..2 {
            let mut lp = lambda.clone();
            let mut lm = lambda.clone();
            lp[k] += h;
            lm[k] -= h;
            let d = (oracle.mean(&lp) - oracle.mean(&lm)) / (2.0 * h);
            for r in 0..2 {
                assert_relative_eq!(d[r], -cov[(r, k)], max_relative = 1e-7);
            }
        }
    }

    #[test]
    fn root_reproduces_target() {
        let prior = random_prior(2, 10, 3);
        let oracle = TiltingOracle::leading(&prior, 2).unwrap();
        let b = DVector::from_vec(vec![0.5, -0.3]);
        let lambda = oracle.root(&b).unwrap();
        assert!((oracle.mean(&lambda) - &b).norm() < 1e-12);
        assert!(oracle.root(&DVector::zeros(2)).unwrap().norm() < 1e-12);
    }

    #[test]
    fn linear_spec_selects_leading_coordinates() {
        let prior = random_prior(3, 8, 4);
        let spec = linear_moment_spec(&prior, DVector::from_vec(vec![0.1, 0.2])).unwrap();
        let v = spec
            .evaluator
            .evaluate(&DVector::from_vec(vec![1.0, 2.0, 3.0]))
            .unwrap();
        assert_eq!(v.as_slice(), &[1.0, 2.0]);
        assert_eq!(spec.blocks, vec![2]);
        assert!(linear_moment_spec(&prior, DVector::zeros(4)).is_err());
    }
}
