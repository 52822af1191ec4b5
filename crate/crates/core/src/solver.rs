//! Newton iteration on the Lagrange multiplier of the moment constraints.
//!
//! The dual function `Γ(λ)` is never evaluated. Its gradient `b − E{h(H_λ)}`
//! and Hessian `cov{h(H_λ)}` are estimated from the learned set at each
//! iteration, and the multiplier is updated by a relaxed Newton step. The
//! iterate with the smallest error is returned along with its learned set.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::kde::KdePrior;
use crate::sampler::{self, IsdeConfig, LearnedSet, NoiseBank};
use crate::scalar::Real;
use crate::stats;
use crate::surrogate::SurrogateModel;

/// Implicit constraint map `h: R^ν → R^{n_c}`.
///
/// `evaluate` is called concurrently over the points of a learned set and must
/// not rely on shared mutable state.
pub trait ConstraintEvaluator<T: Real>: Send + Sync {
    fn n_constraints(&self) -> usize;

    fn evaluate(&self, eta: &DVector<T>) -> Result<DVector<T>>;

    /// Hook run once on the first-iteration values, before any moments are
    /// estimated. Evaluators whose outputs are normalized by a first-iteration
    /// statistic fix that statistic here and rescale `values` in place.
    fn calibrate(&mut self, values: &mut DMatrix<T>) -> Result<()> {
        let _ = values;
        Ok(())
    }
}

pub struct ConstraintSpec<T: Real> {
    pub evaluator: Box<dyn ConstraintEvaluator<T>>,
    /// Block sizes `k_m`, summing to `n_c`.
    pub blocks: Vec<usize>,
    /// Error-function weight per block.
    pub weights: Vec<T>,
    /// Whether each block enters the error function.
    pub included: Vec<bool>,
    pub target: DVector<T>,
}

impl<T: Real> std::fmt::Debug for ConstraintSpec<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ConstraintSpec")
            .field("blocks", &self.blocks)
            .field("weights", &self.weights)
            .field("included", &self.included)
            .field("target", &self.target)
            .finish_non_exhaustive()
    }
}

impl<T: Real> ConstraintSpec<T> {
    /// Spec with unit weights and every block included.
    pub fn new(evaluator: Box<dyn ConstraintEvaluator<T>>, blocks: Vec<usize>, target: DVector<T>) -> Result<Self> {
        let m = blocks.len();
        let spec = ConstraintSpec {
            evaluator,
            blocks,
            weights: vec![T::one(); m],
            included: vec![true; m],
            target,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn with_weights(mut self, weights: Vec<T>) -> Result<Self> {
        self.weights = weights;
        self.validate()?;
        Ok(self)
    }

    pub fn with_included(mut self, included: Vec<bool>) -> Result<Self> {
        self.included = included;
        self.validate()?;
        Ok(self)
    }

    pub fn n_constraints(&self) -> usize {
        self.target.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n_c: usize = self.blocks.iter().sum();
        if n_c != self.target.len() || n_c != self.evaluator.n_constraints() {
            return Err(Error::DimensionMismatch(format!(
                "blocks sum to {n_c}, target has {} entries, evaluator returns {}",
                self.target.len(),
                self.evaluator.n_constraints()
            )));
        }
        if self.blocks.contains(&0) {
            return Err(Error::InvalidConfig("constraint blocks must be nonempty".into()));
        }
        if self.weights.len() != self.blocks.len() || self.included.len() != self.blocks.len() {
            return Err(Error::InvalidConfig(
                "one weight and one inclusion flag per block".into(),
            ));
        }
        if self.weights.iter().any(|w| !(*w >= T::zero())) {
            return Err(Error::InvalidConfig("block weights must be nonnegative".into()));
        }
        if !self
            .weights
            .iter()
            .zip(&self.included)
            .any(|(w, inc)| *inc && *w > T::zero())
        {
            return Err(Error::InvalidConfig(
                "at least one included block needs a positive weight".into(),
            ));
        }
        if self.target.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig("constraint target must be finite".into()));
        }
        Ok(())
    }

    fn block_ranges(&self) -> impl Iterator<Item = std::ops::Range<usize>> + '_ {
        self.blocks.iter().scan(0, |start, &k| {
            let r = *start..*start + k;
            *start += k;
            Some(r)
        })
    }

    /// Evaluates the constraint at every column of `points`, in parallel.
    pub fn evaluate_all(&self, points: &DMatrix<T>) -> Result<DMatrix<T>> {
        let n_c = self.n_constraints();
        let cols: Vec<Result<DVector<T>>> = (0..points.ncols())
            .into_par_iter()
            .map(|l| {
                let h = self
                    .evaluator
                    .evaluate(&points.column(l).into_owned())
                    .map_err(|e| match e {
                        Error::ConstraintEvaluation { message, .. } => {
                            Error::ConstraintEvaluation { point: l, message }
                        }
                        other => other,
                    })?;
                if h.len() != n_c {
                    return Err(Error::DimensionMismatch(format!(
                        "evaluator returned {} values, expected {n_c}",
                        h.len()
                    )));
                }
                if h.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFiniteConstraint {
                        point: l,
                        iteration: None,
                    });
                }
                Ok(h)
            })
            .collect();
        let mut values = DMatrix::zeros(n_c, points.ncols());
        for (l, h) in cols.into_iter().enumerate() {
            values.set_column(l, &h?);
        }
        Ok(values)
    }

    /// `err_m = ‖b_m − E_m‖ / ‖b_m‖` per block. A block with a zero target
    /// falls back to the absolute error `‖E_m‖`.
    pub fn block_errors(&self, moments: &DVector<T>) -> Vec<T> {
        self.block_ranges()
            .map(|r| {
                let b = self.target.rows(r.start, r.len());
                let diff = (b - moments.rows(r.start, r.len())).norm();
                let scale = b.norm();
                if scale > T::zero() {
                    diff / scale
                } else {
                    diff
                }
            })
            .collect()
    }

    /// `err(i) = (Σ_m w_m (err_m(i) / err_m(1))²)^{1/2}` over included blocks.
    pub fn error_value(&self, current: &[T], first: &[T]) -> Result<T> {
        let mut acc = T::zero();
        for (m, ((&e, &e1), (&w, &inc))) in current
            .iter()
            .zip(first)
            .zip(self.weights.iter().zip(&self.included))
            .enumerate()
        {
            if !inc {
                continue;
            }
            if e1 == T::zero() {
                return Err(Error::ZeroFirstIterationError { block: m });
            }
            let r = e / e1;
            acc += w * r * r;
        }
        Ok(acc.sqrt())
    }
}

/// Gradient `b − mean(h)` and Hessian `cov(h)` of the dual function from the
/// constraint values at a learned set (`n_c × N`).
pub fn estimate_grad_hessian<T: Real>(values: &DMatrix<T>, target: &DVector<T>) -> Result<(DVector<T>, DMatrix<T>)> {
    if values.ncols() < 2 {
        return Err(Error::DimensionMismatch("need at least two samples".into()));
    }
    if values.nrows() != target.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} constraint rows, target of length {}",
            values.nrows(),
            target.len()
        )));
    }
    let grad = target - stats::mean(values);
    let hess = stats::covariance(values);
    let trace = hess.trace();
    // spread at rounding level of the values counts as no spread at all
    let floor = T::lit(1e-14) * values.amax();
    if !(trace > T::from_count(values.nrows()) * floor * floor) || !trace.is_finite() {
        return Err(Error::SingularHessian { iteration: None });
    }
    Ok((grad, hess))
}

/// Relative diagonal shift applied before factorizing the Hessian.
pub const HESSIAN_REGULARIZATION: f64 = 1e-8;

/// `λ' = λ − α H⁻¹ ∇Γ`, with `H` shifted by `ε tr(H)/n_c · I` and factorized by
/// Cholesky.
pub fn newton_step<T: Real>(lambda: &DVector<T>, grad: &DVector<T>, hess: &DMatrix<T>, alpha: T) -> Result<DVector<T>> {
    let n = lambda.len();
    if grad.len() != n || hess.shape() != (n, n) {
        return Err(Error::DimensionMismatch("newton step operands disagree in size".into()));
    }
    let shift = T::lit(HESSIAN_REGULARIZATION) * hess.trace() / T::from_count(n);
    let mut h = hess.clone();
    for i in 0..n {
        h[(i, i)] += shift;
    }
    let chol = h.cholesky().ok_or(Error::SingularHessian { iteration: None })?;
    let step = chol.solve(grad);
    if step.iter().any(|v| !v.is_finite()) {
        return Err(Error::SingularHessian { iteration: None });
    }
    Ok(lambda - step * alpha)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig<T: Real> {
    pub i_max: usize,
    pub alpha_relax: T,
    /// Lower bound for the relaxation factor after safeguard halvings.
    pub alpha_floor: T,
}

impl<T: Real> Default for SolverConfig<T> {
    fn default() -> Self {
        SolverConfig {
            i_max: 30,
            alpha_relax: T::lit(0.3),
            alpha_floor: T::lit(0.05),
        }
    }
}

impl<T: Real> SolverConfig<T> {
    pub fn validate(&self) -> Result<()> {
        if self.i_max == 0 {
            return Err(Error::InvalidConfig("solver.i_max must be at least 1".into()));
        }
        if !(self.alpha_relax > T::zero() && self.alpha_relax <= T::one()) {
            return Err(Error::InvalidConfig("solver.alpha_relax must lie in (0, 1]".into()));
        }
        if !(self.alpha_floor > T::zero() && self.alpha_floor <= self.alpha_relax) {
            return Err(Error::InvalidConfig(
                "solver.alpha_floor must lie in (0, alpha_relax]".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord<T: Real> {
    /// One-based iteration index.
    pub iteration: usize,
    pub lambda: DVector<T>,
    pub grad: DVector<T>,
    pub hessian: DMatrix<T>,
    pub moments: DVector<T>,
    pub block_errors: Vec<T>,
    pub err: T,
    /// Relaxation factor used for the step leaving this iteration.
    pub alpha: T,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct LagrangeTrace<T: Real> {
    pub blocks: Vec<usize>,
    pub records: Vec<IterationRecord<T>>,
}

impl<T: Real> LagrangeTrace<T> {
    /// One-based index of the smallest error, earliest on ties.
    pub fn i_sol(&self) -> Option<usize> {
        let mut best: Option<&IterationRecord<T>> = None;
        for r in &self.records {
            if best.is_none_or(|b| r.err < b.err) {
                best = Some(r);
            }
        }
        best.map(|r| r.iteration)
    }

    pub fn errors(&self) -> Vec<T> {
        self.records.iter().map(|r| r.err).collect()
    }

    /// CSV with a fixed column order: iteration, err, one column per block
    /// error, ‖λ‖, α, then the moment estimates and λ components.
    pub fn to_csv(&self) -> String {
        let n_c: usize = self.blocks.iter().sum();
        let mut out = String::from("iteration,err");
        for m in 0..self.blocks.len() {
            let _ = write!(out, ",err_block_{m}");
        }
        out.push_str(",lambda_norm,alpha");
        for k in 0..n_c {
            let _ = write!(out, ",moment_{k}");
        }
        for k in 0..n_c {
            let _ = write!(out, ",lambda_{k}");
        }
        out.push('\n');
        for r in &self.records {
            let _ = write!(out, "{},{}", r.iteration, fmt_float(r.err));
            for e in &r.block_errors {
                let _ = write!(out, ",{}", fmt_float(*e));
            }
            let _ = write!(out, ",{},{}", fmt_float(r.lambda.norm()), fmt_float(r.alpha));
            for v in r.moments.iter().chain(r.lambda.iter()) {
                let _ = write!(out, ",{}", fmt_float(*v));
            }
            out.push('\n');
        }
        out
    }
}

/// Scientific notation with 17 significant digits, enough to round-trip f64.
pub fn fmt_float<T: Real>(x: T) -> String {
    format!("{:.16e}", x.as_f64())
}

#[derive(Debug, Clone)]
pub struct PosteriorResult<T: Real> {
    pub lambda_sol: DVector<T>,
    pub i_sol: usize,
    pub learned_set: LearnedSet<T>,
    /// Constraint values at the points of `learned_set`.
    pub values: DMatrix<T>,
    pub trace: LagrangeTrace<T>,
}

/// Runs the multiplier iteration: sample at `λ^i` with a surrogate built on
/// the previous learned set, estimate moments, take a relaxed Newton step.
pub fn solve<T: Real>(
    spec: &mut ConstraintSpec<T>,
    prior: &KdePrior<T>,
    config: &IsdeConfig<T>,
    solver: &SolverConfig<T>,
) -> Result<PosteriorResult<T>> {
    solve_with(spec, prior, config, solver, |_| {})
}

/// As [`solve`], calling `observe` after each recorded iteration.
pub fn solve_with<T: Real>(
    spec: &mut ConstraintSpec<T>,
    prior: &KdePrior<T>,
    config: &IsdeConfig<T>,
    solver: &SolverConfig<T>,
    mut observe: impl FnMut(&IterationRecord<T>),
) -> Result<PosteriorResult<T>> {
    spec.validate()?;
    solver.validate()?;
    let bank = NoiseBank::draw(prior, config)?;
    let n_c = spec.n_constraints();

    let mut lambda = DVector::zeros(n_c);
    let mut alpha = solver.alpha_relax;
    let mut previous: Option<(DMatrix<T>, DMatrix<T>)> = None;
    let mut first_errors: Option<Vec<T>> = None;
    let mut best: Option<(T, LearnedSet<T>, DMatrix<T>)> = None;
    let mut trace = LagrangeTrace {
        blocks: spec.blocks.clone(),
        records: Vec::with_capacity(solver.i_max),
    };

    for i in 1..=solver.i_max {
        let model = match previous.take() {
            Some((anchors, values)) => Some(SurrogateModel::build(anchors, values).map_err(|e| e.at_iteration(i))?),
            None => None,
        };
        let learned = sampler::run(config, &bank, prior, model.as_ref(), &lambda).map_err(|e| e.at_iteration(i))?;
        drop(model);
        let mut values = spec.evaluate_all(&learned.points).map_err(|e| e.at_iteration(i))?;
        if i == 1 {
            spec.evaluator.calibrate(&mut values)?;
        }
        let (grad, hess) = estimate_grad_hessian(&values, &spec.target).map_err(|e| e.at_iteration(i))?;
        let moments = &spec.target - &grad;
        let block_errors = spec.block_errors(&moments);
        let first = first_errors.get_or_insert_with(|| block_errors.clone());
        let err = spec.error_value(&block_errors, first)?;

        if let Some(prev) = trace.records.last() {
            if err > T::lit(2.0) * prev.err {
                alpha = (alpha / T::lit(2.0)).max(solver.alpha_floor);
            }
        }
        let record = IterationRecord {
            iteration: i,
            lambda: lambda.clone(),
            grad: grad.clone(),
            hessian: hess.clone(),
            moments,
            block_errors,
            err,
            alpha,
        };
        observe(&record);
        trace.records.push(record);

        if best.as_ref().is_none_or(|(e, _, _)| err < *e) {
            best = Some((err, learned.clone(), values.clone()));
        }
        if i < solver.i_max {
            lambda = newton_step(&lambda, &grad, &hess, alpha).map_err(|e| e.at_iteration(i))?;
        }
        previous = Some((learned.points, values));
    }

    let i_sol = trace.i_sol().expect("at least one iteration ran");
    let (_, learned_set, values) = best.expect("at least one iteration ran");
    Ok(PosteriorResult {
        lambda_sol: learned_set.lambda.clone(),
        i_sol,
        learned_set,
        values,
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    struct Identity(usize);
    impl ConstraintEvaluator<f64> for Identity {
        fn n_constraints(&self) -> usize {
            self.0
        }
        fn evaluate(&self, eta: &DVector<f64>) -> Result<DVector<f64>> {
            Ok(eta.rows(0, self.0).into_owned())
        }
    }

    struct Poison;
    impl ConstraintEvaluator<f64> for Poison {
        fn n_constraints(&self) -> usize {
            1
        }
        fn evaluate(&self, eta: &DVector<f64>) -> Result<DVector<f64>> {
            Ok(DVector::from_element(1, if eta[0] > 0.0 { f64::NAN } else { 0.0 }))
        }
    }

    fn spec(blocks: Vec<usize>, target: Vec<f64>) -> ConstraintSpec<f64> {
        let n = blocks.iter().sum();
        ConstraintSpec::new(Box::new(Identity(n)), blocks, DVector::from_vec(target)).unwrap()
    }

    #[test]
    fn hand_computed_gradient_and_hessian() {
        let values = DMatrix::from_row_slice(1, 2, &[0.0, 2.0]);
        let (g, h) = estimate_grad_hessian(&values, &DVector::from_element(1, 3.0)).unwrap();
        assert_eq!(g[0], 2.0);
        assert_eq!(h[(0, 0)], 2.0);
    }

    #[test]
    fn constant_values_give_singular_hessian() {
        let values = DMatrix::from_element(2, 5, 1.5);
        let target = DVector::from_element(2, 1.5);
        assert_eq!(
            estimate_grad_hessian(&values, &target).unwrap_err(),
            Error::SingularHessian { iteration: None }
        );
    }

    #[test]
    fn newton_step_hand_cases() {
        let lambda = DVector::from_vec(vec![1.0, -2.0]);
        let grad = DVector::from_vec(vec![0.5, 0.25]);
        let out = newton_step(&lambda, &grad, &DMatrix::identity(2, 2), 1.0).unwrap();
        assert_relative_eq!(out, &lambda - &grad, epsilon = 1e-7);

        let out = newton_step(&lambda, &DVector::zeros(2), &DMatrix::identity(2, 2), 0.3).unwrap();
        assert_eq!(out, lambda);

        let hess = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 4.0]));
        let grad = DVector::from_vec(vec![2.0, 4.0]);
        let out = newton_step(&lambda, &grad, &hess, 0.5).unwrap();
        assert_relative_eq!(out, &lambda - DVector::from_vec(vec![0.5, 0.5]), epsilon = 1e-7);
    }

    #[test]
    fn indefinite_hessian_is_rejected() {
        let hess = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        let r = newton_step(&DVector::zeros(2), &DVector::from_element(2, 1.0), &hess, 1.0);
        assert!(matches!(r, Err(Error::SingularHessian { .. })));
    }

    #[test]
    fn first_iteration_error_is_root_of_included_block_count() {
        let s = spec(vec![1, 2, 1], vec![1.0, 2.0, 3.0, 4.0]);
        let errs = vec![0.3, 0.7, 0.1];
        assert_relative_eq!(s.error_value(&errs, &errs).unwrap(), 3f64.sqrt());
        let s = s.with_included(vec![false, true, true]).unwrap();
        assert_relative_eq!(s.error_value(&errs, &errs).unwrap(), 2f64.sqrt());
        assert_eq!(s.error_value(&[0.0, 0.0, 0.0], &errs).unwrap(), 0.0);
    }

    #[test]
    fn zero_first_error_is_reported_only_for_included_blocks() {
        let s = spec(vec![1, 1], vec![1.0, 2.0]);
        assert_eq!(
            s.error_value(&[0.1, 0.1], &[0.2, 0.0]).unwrap_err(),
            Error::ZeroFirstIterationError { block: 1 }
        );
        let s = s.with_included(vec![true, false]).unwrap();
        assert!(s.error_value(&[0.1, 0.1], &[0.2, 0.0]).is_ok());
    }

    #[test]
    fn block_errors_are_relative_with_absolute_fallback() {
        let s = spec(vec![2, 1], vec![3.0, 4.0, 0.0]);
        let e = s.block_errors(&DVector::from_vec(vec![3.0, 4.5, 0.25]));
        assert_relative_eq!(e[0], 0.1);
        assert_relative_eq!(e[1], 0.25);
    }

    #[test]
    fn spec_validation() {
        let mk = |blocks: Vec<usize>, target: Vec<f64>| {
            ConstraintSpec::new(Box::new(Identity(2)), blocks, DVector::from_vec(target))
        };
        assert!(mk(vec![2], vec![1.0, 1.0]).is_ok());
        assert!(mk(vec![1], vec![1.0]).is_err());
        assert!(mk(vec![2, 0], vec![1.0, 1.0]).is_err());
        assert!(mk(vec![2], vec![1.0, f64::INFINITY]).is_err());
        assert!(mk(vec![1, 1], vec![1.0, 1.0])
            .unwrap()
            .with_weights(vec![0.0, 0.0])
            .is_err());
    }

    #[test]
    fn i_sol_takes_earliest_minimum() {
        let rec = |i, err| IterationRecord {
            iteration: i,
            lambda: DVector::zeros(1),
            grad: DVector::zeros(1),
            hessian: DMatrix::zeros(1, 1),
            moments: DVector::zeros(1),
            block_errors: vec![err],
            err,
            alpha: 0.3,
        };
        let trace = LagrangeTrace {
            blocks: vec![1],
            records: vec![rec(1, 1.0), rec(2, 0.4), rec(3, 0.4), rec(4, 0.9)],
        };
        assert_eq!(trace.i_sol(), Some(2));
        let csv = trace.to_csv();
        assert!(csv.starts_with("iteration,err,err_block_0,lambda_norm,alpha,moment_0,lambda_0\n"));
        assert!(csv.contains("2,4.0000000000000002e-1,"));
    }

    #[test]
    fn non_finite_constraint_carries_point_and_iteration() {
        let eta = DMatrix::from_row_slice(1, 6, &[-1.0, -0.5, -0.2, 0.1, 0.4, 1.0]);
        let prior = KdePrior::new(eta).unwrap();
        let config = IsdeConfig::for_prior(&prior, 16, 1);
        let mut s = ConstraintSpec::new(Box::new(Poison), vec![1], DVector::from_element(1, 1.0)).unwrap();
        let err = solve(&mut s, &prior, &config, &SolverConfig::default()).unwrap_err();
        assert!(matches!(err, Error::NonFiniteConstraint { iteration: Some(1), .. }));
    }
}
