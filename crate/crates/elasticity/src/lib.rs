//! Stochastic homogenization of a random linear elastic plate at desk scale.
//!
//! A trilinear hexahedral mesh of `(0,1)×(0,1)×(0,0.1)` carries a random
//! isotropic elasticity field. Six affine-displacement load cases give the
//! effective 6×6 matrix. Realizations are packed into physical vectors for
//! the inference core, and [`constraint`] turns the residue and the first two
//! moments of the effective matrix into a constraint on the learned set.

// Negated comparisons are deliberate: they also reject NaN. Index loops
// mirror the banded and element formulas.
#![allow(
    clippy::neg_cmp_op_on_partial_ord,
    clippy::needless_range_loop,
    clippy::type_complexity
)]

pub mod banded;
pub mod constraint;
pub mod error;
pub mod fem;
pub mod layout;
pub mod material;
pub mod mesh;
pub mod report;

pub use constraint::{homogenization_spec, HomogenizationEvaluator, HomogenizationTargets};
pub use error::{ElasticityError, Result};
pub use layout::{generate_training, Layout, TrainingSet};
pub use material::{MaterialSample, PriorHyper};
pub use mesh::Mesh;
pub use report::{moment_report, MomentReport};
