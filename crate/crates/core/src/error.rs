use thiserror::Error;

/// Errors raised by the inference engine.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("degenerate training set: {0}")]
    DegenerateTrainingSet(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("anchor component {component} has zero sample variance")]
    ZeroVarianceComponent { component: usize },

    #[error("a nonzero Lagrange multiplier requires a surrogate model")]
    MissingSurrogate,

    #[error("chain {chain} diverged at step {step}")]
    ChainDiverged { chain: usize, step: usize },

    #[error("singular Hessian{}", fmt_iteration(*.iteration))]
    SingularHessian { iteration: Option<usize> },

    #[error("block {block} has zero error at the first iteration")]
    ZeroFirstIterationError { block: usize },

    #[error("constraint returned a non-finite value at point {point}{}", fmt_iteration(*.iteration))]
    NonFiniteConstraint { point: usize, iteration: Option<usize> },

    #[error("constraint evaluation failed at point {point}: {message}")]
    ConstraintEvaluation { point: usize, message: String },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("matrix file: {0}")]
    MatrixFile(String),
}

fn fmt_iteration(iteration: Option<usize>) -> String {
    match iteration {
        Some(i) => format!(" at iteration {i}"),
        None => String::new(),
    }
}

impl Error {
    /// Attaches a Newton iteration index to errors that carry one.
    pub fn at_iteration(self, i: usize) -> Self {
        match self {
            Error::SingularHessian { .. } => Error::SingularHessian { iteration: Some(i) },
            Error::NonFiniteConstraint { point, .. } => Error::NonFiniteConstraint {
                point,
                iteration: Some(i),
            },
            other => other,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
