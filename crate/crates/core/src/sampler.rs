//! Störmer-Verlet integration of the dissipative Hamiltonian ISDE whose
//! invariant measure is the λ-tilted KDE prior.
//!
//! Each chain `ℓ` advances `(U, V)` through
//!
//! ```text
//! U_{m+1/2} = U_m + Δt/2 · V_m
//! V_{m+1}   = (1−γ)/(1+γ) · V_m + Δt/(1+γ) · L(U_{m+1/2}) + √f0/(1+γ) · ΔW_{m+1}
//! U_{m+1}   = U_{m+1/2} + Δt/2 · V_{m+1}
//! ```
//!
//! with `γ = f0 Δt / 4` and drift `L(u) = ∇ log ζ(u) − [∇ĥ(u)] λ`. Only the
//! terminal position of every chain is kept.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::kde::KdePrior;
use crate::scalar::Real;
use crate::surrogate::SurrogateModel;

/// Positions beyond this norm are treated as a diverged chain.
pub const DIVERGENCE_NORM: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IsdeConfig<T: Real> {
    pub f0: T,
    pub dt: T,
    pub n_steps: usize,
    pub n_chains: usize,
    pub seed: u64,
}

impl<T: Real> IsdeConfig<T> {
    /// Defaults tied to the prior: `f0 = 4`, `Δt = 2πŝ/20` and enough steps
    /// to integrate past `t = 40/f0`, i.e. twenty dissipation time constants.
    pub fn for_prior(prior: &KdePrior<T>, n_chains: usize, seed: u64) -> Self {
        let f0 = T::lit(4.0);
        let dt = T::two_pi() * prior.s_hat() / T::lit(20.0);
        IsdeConfig {
            f0,
            dt,
            n_steps: steps_for(f0, dt),
            n_chains,
            seed,
        }
    }

    pub fn gamma(&self) -> T {
        self.f0 * self.dt / T::lit(4.0)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.f0 > T::zero()) {
            return Err(Error::InvalidConfig("sampler.f0 must be positive".into()));
        }
        if !(self.dt > T::zero()) {
            return Err(Error::InvalidConfig("sampler.dt must be positive".into()));
        }
        if self.n_steps == 0 {
            return Err(Error::InvalidConfig("sampler.n_steps must be at least 1".into()));
        }
        if self.n_chains < 2 {
            return Err(Error::InvalidConfig("sampler.n_chains must be at least 2".into()));
        }
        if !(self.gamma() < T::one()) {
            return Err(Error::InvalidConfig(format!(
                "f0·dt/4 = {} must be below 1",
                self.gamma().as_f64()
            )));
        }
        Ok(())
    }
}

/// Smallest step count with `n · dt ≥ 40 / f0`.
pub fn steps_for<T: Real>(f0: T, dt: T) -> usize {
    let n = (T::lit(40.0) / f0 / dt).ceil().as_f64();
    (n as usize).max(1)
}

/// Initial conditions and Wiener increments, drawn once per run.
///
/// Every chain owns an independent ChaCha stream, so the bank is identical
/// regardless of how chains are later scheduled, and it is reused unchanged
/// across all Newton iterations.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseBank<T: Real> {
    dim: usize,
    n_steps: usize,
    u0: DMatrix<T>,
    v0: DMatrix<T>,
    /// Chain-major: chain `ℓ` owns `n_steps · dim` consecutive entries.
    increments: Vec<T>,
}

impl<T: Real> NoiseBank<T> {
    pub fn draw(prior: &KdePrior<T>, config: &IsdeConfig<T>) -> Result<Self> {
        config.validate()?;
        let dim = prior.dim();
        let n_d = prior.n_anchors();
        let n = config.n_chains;
        let per_chain = config.n_steps * dim;
        let sqrt_dt = config.dt.sqrt();

        let mut u0 = DMatrix::zeros(dim, n);
        let mut v0 = DMatrix::zeros(dim, n);
        let mut increments = vec![T::zero(); n * per_chain];
        u0.as_mut_slice()
            .par_chunks_mut(dim)
            .zip(v0.as_mut_slice().par_chunks_mut(dim))
            .zip(increments.par_chunks_mut(per_chain.max(1)))
            .enumerate()
            .for_each(|(chain, ((u, v), inc))| {
                let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
                rng.set_stream(chain as u64 + 1);
                let j = rng.random_range(0..n_d);
                u.copy_from_slice(prior.anchors().column(j).as_slice());
                for x in v.iter_mut() {
                    *x = T::lit(rng.sample::<f64, _>(StandardNormal));
                }
                for x in inc.iter_mut() {
                    *x = sqrt_dt * T::lit(rng.sample::<f64, _>(StandardNormal));
                }
            });
        Ok(NoiseBank {
            dim,
            n_steps: config.n_steps,
            u0,
            v0,
            increments,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn n_chains(&self) -> usize {
        self.u0.ncols()
    }

    pub fn u0(&self) -> &DMatrix<T> {
        &self.u0
    }

    pub fn v0(&self) -> &DMatrix<T> {
        &self.v0
    }

    /// Increment `ΔW_{step+1}` of `chain`.
    pub fn increment(&self, chain: usize, step: usize) -> &[T] {
        let start = (chain * self.n_steps + step) * self.dim;
        &self.increments[start..start + self.dim]
    }

    /// Replaces the initial conditions and increments wholesale; used to pin
    /// the recurrence in tests.
    pub fn from_parts(u0: DMatrix<T>, v0: DMatrix<T>, increments: Vec<T>, n_steps: usize) -> Result<Self> {
        let dim = u0.nrows();
        if v0.shape() != u0.shape() || increments.len() != u0.ncols() * n_steps * dim {
            return Err(Error::DimensionMismatch("noise bank parts disagree in shape".into()));
        }
        Ok(NoiseBank {
            dim,
            n_steps,
            u0,
            v0,
            increments,
        })
    }
}

/// Terminal positions of all chains for one multiplier value.
#[derive(Debug, Clone, PartialEq)]
pub struct LearnedSet<T: Real> {
    pub lambda: DVector<T>,
    /// `ν × N`, one column per chain.
    pub points: DMatrix<T>,
}

impl<T: Real> LearnedSet<T> {
    pub fn len(&self) -> usize {
        self.points.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.points.ncols() == 0
    }

    pub fn mean(&self) -> DVector<T> {
        self.points.column_mean()
    }

    /// Unbiased sample covariance.
    pub fn covariance(&self) -> DMatrix<T> {
        crate::stats::covariance(&self.points)
    }
}

fn lambda_is_zero<T: Real>(lambda: &DVector<T>) -> bool {
    lambda.iter().all(|v| *v == T::zero())
}

/// Drift `L(u) = ∇ log ζ(u) − [∇ĥ(u)] λ`; the surrogate term is skipped when
/// `λ = 0`.
pub fn drift<T: Real>(
    prior: &KdePrior<T>,
    model: Option<&SurrogateModel<T>>,
    lambda: &DVector<T>,
    u: &DVector<T>,
) -> Result<DVector<T>> {
    let g = prior.grad_log_zeta(u);
    if lambda_is_zero(lambda) {
        return Ok(g);
    }
    let model = model.ok_or(Error::MissingSurrogate)?;
    Ok(g - model.project(lambda)?.grad_dot(u))
}

/// Source of the drift for the integrator. Tests substitute a closed form.
pub trait Drift<T: Real>: Sync {
    fn scratch_len(&self) -> usize;
    fn eval(&self, u: &[T], scratch: &mut [T], out: &mut [T]);
}

struct TiltedKde<'a, T: Real> {
    prior: &'a KdePrior<T>,
    projected: Option<crate::surrogate::ProjectedSurrogate<'a, T>>,
}

impl<T: Real> Drift<T> for TiltedKde<'_, T> {
    fn scratch_len(&self) -> usize {
        self.prior.n_anchors() + self.prior.dim() + self.projected.as_ref().map_or(0, |p| p.scratch_len())
    }

    fn eval(&self, u: &[T], scratch: &mut [T], out: &mut [T]) {
        let n_d = self.prior.n_anchors();
        let nu = self.prior.dim();
        let (terms, rest) = scratch.split_at_mut(n_d);
        self.prior.grad_log_zeta_into(u, terms, out);
        if let Some(p) = &self.projected {
            let (tilt, rest) = rest.split_at_mut(nu);
            p.grad_dot_into(u, rest, tilt);
            for (o, t) in out.iter_mut().zip(tilt.iter()) {
                *o -= *t;
            }
        }
    }
}

/// Runs all chains with the tilted-KDE drift and returns the learned set.
pub fn run<T: Real>(
    config: &IsdeConfig<T>,
    bank: &NoiseBank<T>,
    prior: &KdePrior<T>,
    model: Option<&SurrogateModel<T>>,
    lambda: &DVector<T>,
) -> Result<LearnedSet<T>> {
    if bank.dim() != prior.dim() {
        return Err(Error::DimensionMismatch(
            "noise bank and prior dimensions differ".into(),
        ));
    }
    let projected = if lambda_is_zero(lambda) {
        None
    } else {
        let model = model.ok_or(Error::MissingSurrogate)?;
        if model.dim() != prior.dim() {
            return Err(Error::DimensionMismatch("surrogate and prior dimensions differ".into()));
        }
        Some(model.project(lambda)?)
    };
    let drift = TiltedKde { prior, projected };
    let points = integrate(config, bank, &drift)?;
    Ok(LearnedSet {
        lambda: lambda.clone(),
        points,
    })
}

/// Integrates every chain of `bank` under an arbitrary drift.
pub fn integrate<T: Real, D: Drift<T>>(config: &IsdeConfig<T>, bank: &NoiseBank<T>, drift: &D) -> Result<DMatrix<T>> {
    config.validate()?;
    if bank.n_chains() != config.n_chains || bank.n_steps() != config.n_steps {
        return Err(Error::DimensionMismatch(format!(
            "noise bank holds {} chains x {} steps, config asks for {} x {}",
            bank.n_chains(),
            bank.n_steps(),
            config.n_chains,
            config.n_steps
        )));
    }
    let dim = bank.dim();
    let gamma = config.gamma();
    let dt = config.dt;
    let half_dt = dt / T::lit(2.0);
    let denom = T::one() + gamma;
    let damp = (T::one() - gamma) / denom;
    let push = dt / denom;
    let kick = config.f0.sqrt() / denom;
    let cap2 = T::lit(DIVERGENCE_NORM * DIVERGENCE_NORM);

    let mut out = bank.u0.clone();
    let failures: Vec<Error> = out
        .as_mut_slice()
        .par_chunks_mut(dim)
        .enumerate()
        .filter_map(|(chain, u)| {
            let mut v = bank.v0.column(chain).into_owned();
            let mut l = vec![T::zero(); dim];
            let mut scratch = vec![T::zero(); drift.scratch_len()];
            for step in 0..config.n_steps {
                for (ui, vi) in u.iter_mut().zip(v.iter()) {
                    *ui += half_dt * *vi;
                }
                drift.eval(u, &mut scratch, &mut l);
                let dw = bank.increment(chain, step);
                for ((vi, li), wi) in v.iter_mut().zip(&l).zip(dw) {
                    *vi = damp * *vi + push * *li + kick * *wi;
                }
                let mut norm2 = T::zero();
                let mut finite = true;
                for (ui, vi) in u.iter_mut().zip(v.iter()) {
                    *ui += half_dt * *vi;
                    finite &= ui.is_finite() && vi.is_finite();
                    norm2 += *ui * *ui;
                }
                if !finite || !(norm2 <= cap2) {
                    return Some(Error::ChainDiverged { chain, step: step + 1 });
                }
            }
            None
        })
        .collect();
    // report the lowest chain index so the error does not depend on scheduling
    match failures.into_iter().min_by_key(|e| match e {
        Error::ChainDiverged { chain, .. } => *chain,
        _ => usize::MAX,
    }) {
        Some(e) => Err(e),
        None => Ok(out),
    }
}
