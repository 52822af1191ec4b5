//! Constrained probabilistic learning with implicit constraints.
//!
//! A small training set is normalized by PCA and turned into a Gaussian KDE
//! prior. Samples of the prior tilted by `exp(−⟨λ, h(η)⟩)` are generated by a
//! dissipative Hamiltonian ISDE whose drift uses a kernel surrogate of `h`.
//! A Newton iteration on `λ` then drives the sample moments of `h` to their
//! targets.
//!
//! Everything numeric is generic over [`Real`]; the `*64` aliases below fix
//! the scalar to `f64`, which is what the binaries use.

// Negated comparisons are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod constraints;
pub mod error;
pub mod io;
pub mod kde;
pub mod sampler;
pub mod scalar;
pub mod solver;
pub mod stats;
pub mod surrogate;

pub use error::{Error, Result};
pub use scalar::Real;

pub type NormalizationMap64 = kde::NormalizationMap<f64>;
pub type KdePrior64 = kde::KdePrior<f64>;
pub type SurrogateModel64 = surrogate::SurrogateModel<f64>;
pub type IsdeConfig64 = sampler::IsdeConfig<f64>;
pub type NoiseBank64 = sampler::NoiseBank<f64>;
pub type LearnedSet64 = sampler::LearnedSet<f64>;
pub type ConstraintSpec64 = solver::ConstraintSpec<f64>;
pub type SolverConfig64 = solver::SolverConfig<f64>;
pub type LagrangeTrace64 = solver::LagrangeTrace<f64>;
pub type PosteriorResult64 = solver::PosteriorResult<f64>;
pub type TiltingOracle64 = constraints::TiltingOracle<f64>;
