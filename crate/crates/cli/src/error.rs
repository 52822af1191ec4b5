use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error at {field}: {reason}")]
    Config { field: String, reason: String },

    #[error("i/o error: {0}")]
    Io(String),

    #[error("artifact mismatch: {0}")]
    Mismatch(String),

    #[error(transparent)]
    Core(#[from] plinfer_core::Error),

    #[error(transparent)]
    Elasticity(#[from] plinfer_elasticity::ElasticityError),
}

impl CliError {
    /// Short category printed with the message and mapped to the exit code.
    pub fn category(&self) -> &'static str {
        match self {
            CliError::Config { .. } => "config",
            CliError::Io(_) => "io",
            CliError::Mismatch(_) => "mismatch",
            CliError::Core(_) => "inference",
            CliError::Elasticity(_) => "bvp",
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config { .. } => 2,
            CliError::Io(_) => 3,
            CliError::Mismatch(_) => 4,
            CliError::Core(_) => 5,
            CliError::Elasticity(_) => 6,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}
