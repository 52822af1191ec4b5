use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ElasticityError {
    #[error("invalid mesh: {0}")]
    InvalidMesh(String),

    #[error("invalid material parameters: {0}")]
    InvalidMaterial(String),

    #[error("BVP solve failed{}: {message}", fmt_realization(*.realization))]
    BvpSolveFailure {
        realization: Option<usize>,
        message: String,
    },

    #[error("effective matrix is not positive definite (smallest eigenvalue {min_eigenvalue:e})")]
    NotSpd { min_eigenvalue: f64 },

    #[error("vector layout mismatch: {0}")]
    Layout(String),

    #[error(transparent)]
    Core(#[from] plinfer_core::Error),
}

fn fmt_realization(r: Option<usize>) -> String {
    r.map(|r| format!(" for realization {r}")).unwrap_or_default()
}

impl ElasticityError {
    pub fn for_realization(self, j: usize) -> Self {
        match self {
            ElasticityError::BvpSolveFailure { message, .. } => ElasticityError::BvpSolveFailure {
                realization: Some(j),
                message,
            },
            other => other,
        }
    }
}

pub type Result<T, E = ElasticityError> = std::result::Result<T, E>;
