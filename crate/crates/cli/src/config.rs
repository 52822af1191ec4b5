//! Run configuration: a TOML file with one table per concern.
//!
//! ```toml
//! problem = "homogenization"   # or "linear-moment"
//! seed = 42
//!
//! [mesh]
//! cells = [6, 6, 3]
//!
//! [sampler]
//! n_chains = 2000
//!
//! [solver]
//! i_max = 15
//! ```
//!
//! Every key is optional except where a problem needs it; unknown keys are
//! rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use plinfer_elasticity::material::{PriorHyper, CASE_LENGTHS, COV_BULK, COV_SHEAR, MEAN_BULK, MEAN_SHEAR};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    GenerateTraining,
    Learn,
    Report,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Problem {
    Homogenization,
    LinearMoment,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub problem: Problem,
    #[serde(default)]
    pub mode: Option<Mode>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub out: Option<String>,
    #[serde(default)]
    pub mesh: MeshConfig,
    #[serde(default)]
    pub prior: PriorConfig,
    #[serde(default)]
    pub training: TrainingConfig,
    #[serde(default)]
    pub linear: LinearConfig,
    #[serde(default)]
    pub sampler: SamplerConfig,
    #[serde(default)]
    pub solver: SolverBlock,
    #[serde(default)]
    pub target: TargetConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MeshConfig {
    pub cells: [usize; 3],
    pub lengths: [f64; 3],
}

impl Default for MeshConfig {
    fn default() -> Self {
        MeshConfig {
            cells: [6, 6, 3],
            lengths: [1.0, 1.0, 0.1],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PriorConfig {
    pub corr_lengths: [f64; 3],
    pub mean_bulk: f64,
    pub mean_shear: f64,
    pub cov_bulk: f64,
    pub cov_shear: f64,
    pub delta_range: [f64; 2],
    pub n_modes: usize,
}

impl Default for PriorConfig {
    fn default() -> Self {
        PriorConfig {
            corr_lengths: CASE_LENGTHS[0],
            mean_bulk: MEAN_BULK,
            mean_shear: MEAN_SHEAR,
            cov_bulk: COV_BULK,
            cov_shear: COV_SHEAR,
            delta_range: [0.1, 0.5],
            n_modes: 256,
        }
    }
}

impl PriorConfig {
    pub fn hyper(&self) -> PriorHyper {
        PriorHyper {
            corr_lengths: self.corr_lengths,
            mean_bulk: self.mean_bulk,
            mean_shear: self.mean_shear,
            cov_bulk: self.cov_bulk,
            cov_shear: self.cov_shear,
            delta_lo: self.delta_range[0],
            delta_hi: self.delta_range[1],
            n_modes: self.n_modes,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingConfig {
    /// Number of training realizations `N_d`.
    pub n_d: usize,
    /// Reduced dimension; defaults to `N_d − 1`.
    pub nu: Option<usize>,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig { n_d: 50, nu: None }
    }
}

/// Analytic fixture: standard normal training points in `R^dim`, with the
/// means of the leading reduced coordinates constrained to `target`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LinearConfig {
    pub dim: usize,
    pub target: Vec<f64>,
}

impl Default for LinearConfig {
    fn default() -> Self {
        LinearConfig {
            dim: 2,
            target: vec![0.5, -0.3],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplerConfig {
    pub f0: f64,
    /// Defaults to `2π ŝ / 20`.
    pub dt: Option<f64>,
    /// Steps per chain `M_s`; defaults to enough for `t = 40 / f0`.
    pub n_steps: Option<usize>,
    /// Learned-set size `N`.
    pub n_chains: usize,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            f0: 4.0,
            dt: None,
            n_steps: None,
            n_chains: 2000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverBlock {
    pub i_max: usize,
    pub alpha_relax: f64,
    pub alpha_floor: f64,
    /// One error weight per constraint block.
    pub weights: Option<Vec<f64>>,
}

impl Default for SolverBlock {
    fn default() -> Self {
        SolverBlock {
            i_max: 30,
            alpha_relax: 0.3,
            alpha_floor: 0.05,
            weights: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TargetSource {
    /// Targets from a batch of realizations at scaled moduli means.
    Synthetic,
    /// Targets given in `c_exp` and `delta_exp`.
    Inline,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TargetConfig {
    pub source: TargetSource,
    pub truth_scale_bulk: f64,
    pub truth_scale_shear: f64,
    pub n_truth: usize,
    /// Defaults to a seed derived from the run seed.
    pub truth_seed: Option<u64>,
    /// Target mean effective matrix (Pa), 6 rows of 6.
    pub c_exp: Option<Vec<Vec<f64>>>,
    pub delta_exp: Option<f64>,
}

impl Default for TargetConfig {
    fn default() -> Self {
        TargetConfig {
            source: TargetSource::Synthetic,
            truth_scale_bulk: 1.15,
            truth_scale_shear: 1.15,
            n_truth: 50,
            truth_seed: None,
            c_exp: None,
            delta_exp: None,
        }
    }
}

fn invalid(field: &str, reason: impl Into<String>) -> CliError {
    CliError::Config {
        field: field.to_string(),
        reason: reason.into(),
    }
}

impl RunConfig {
    pub fn parse_str(text: &str) -> Result<Self, CliError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| CliError::Config {
            field: e
                .span()
                .map(|s| format!("bytes {}..{}", s.start, s.end))
                .unwrap_or_else(|| "<document>".into()),
            reason: e.message().to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        Self::parse_str(&text)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let positive = |v: f64| v > 0.0 && v.is_finite();
        if self.mesh.cells.iter().any(|&c| c < 2) {
            return Err(invalid("mesh.cells", "need at least 2 cells per axis"));
        }
        if !self.mesh.lengths.iter().all(|&l| positive(l)) {
            return Err(invalid("mesh.lengths", "must be positive"));
        }
        if !self.prior.corr_lengths.iter().all(|&l| positive(l)) {
            return Err(invalid("prior.corr_lengths", "must be positive"));
        }
        if !(positive(self.prior.mean_bulk) && positive(self.prior.mean_shear)) {
            return Err(invalid("prior.mean_bulk", "moduli means must be positive"));
        }
        if !(positive(self.prior.cov_bulk) && positive(self.prior.cov_shear)) {
            return Err(invalid("prior.cov_bulk", "coefficients of variation must be positive"));
        }
        let [lo, hi] = self.prior.delta_range;
        if !(0.0 < lo && lo <= hi && hi.is_finite()) {
            return Err(invalid("prior.delta_range", "need 0 < lo <= hi"));
        }
        if self.prior.n_modes == 0 {
            return Err(invalid("prior.n_modes", "must be at least 1"));
        }
        if self.training.n_d < 2 {
            return Err(invalid("training.n_d", "need at least 2 realizations"));
        }
        if let Some(nu) = self.training.nu {
            if nu == 0 || nu >= self.training.n_d {
                return Err(invalid("training.nu", "must lie in 1..n_d"));
            }
        }
        if self.problem == Problem::LinearMoment {
            if self.linear.dim == 0 {
                return Err(invalid("linear.dim", "must be positive"));
            }
            if self.linear.target.is_empty() || self.linear.target.len() > self.linear.dim {
                return Err(invalid("linear.target", "needs between 1 and dim entries"));
            }
            if self.linear.target.len() > self.training.n_d - 1 {
                return Err(invalid(
                    "linear.target",
                    "more constrained components than training.n_d - 1",
                ));
            }
            if self.linear.target.iter().any(|v| !v.is_finite()) {
                return Err(invalid("linear.target", "must be finite"));
            }
        }
        if !positive(self.sampler.f0) {
            return Err(invalid("sampler.f0", "must be positive"));
        }
        if let Some(dt) = self.sampler.dt {
            if !positive(dt) {
                return Err(invalid("sampler.dt", "must be positive"));
            }
            if self.sampler.f0 * dt / 4.0 >= 1.0 {
                return Err(invalid("sampler.dt", "f0 * dt / 4 must be below 1"));
            }
        }
        if self.sampler.n_steps == Some(0) {
            return Err(invalid("sampler.n_steps", "must be at least 1"));
        }
        if self.sampler.n_chains < 2 {
            return Err(invalid("sampler.n_chains", "must be at least 2"));
        }
        if self.solver.i_max == 0 {
            return Err(invalid("solver.i_max", "must be at least 1"));
        }
        if !(self.solver.alpha_relax > 0.0 && self.solver.alpha_relax <= 1.0) {
            return Err(invalid("solver.alpha_relax", "must lie in (0, 1]"));
        }
        if !(self.solver.alpha_floor > 0.0 && self.solver.alpha_floor <= self.solver.alpha_relax) {
            return Err(invalid("solver.alpha_floor", "must lie in (0, alpha_relax]"));
        }
        if let Some(w) = &self.solver.weights {
            let blocks = match self.problem {
                Problem::Homogenization => 3,
                Problem::LinearMoment => 1,
            };
            if w.len() != blocks {
                return Err(invalid("solver.weights", format!("need {blocks} entries")));
            }
            if w.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
                return Err(invalid("solver.weights", "must be nonnegative"));
            }
        }
        if self.problem == Problem::Homogenization {
            match self.target.source {
                TargetSource::Synthetic => {
                    if !(positive(self.target.truth_scale_bulk) && positive(self.target.truth_scale_shear)) {
                        return Err(invalid("target.truth_scale_bulk", "scales must be positive"));
                    }
                    if self.target.n_truth < 2 {
                        return Err(invalid("target.n_truth", "need at least 2 truth realizations"));
                    }
                }
                TargetSource::Inline => {
                    let Some(c) = &self.target.c_exp else {
                        return Err(invalid("target.c_exp", "required for inline targets"));
                    };
                    if c.len() != 6 || c.iter().any(|row| row.len() != 6) {
                        return Err(invalid("target.c_exp", "must be 6 rows of 6"));
                    }
                    if c.iter().flatten().any(|v| !v.is_finite()) {
                        return Err(invalid("target.c_exp", "must be finite"));
                    }
                    match self.target.delta_exp {
                        Some(d) if positive(d) => {}
                        _ => return Err(invalid("target.delta_exp", "required and positive for inline targets")),
                    }
                }
            }
        }
        Ok(())
    }

    /// SHA-256 of the configuration with `mode`, `seed` and `out` cleared,
    /// so that the stages of one run share a hash and the seed is tracked
    /// separately.
    pub fn hash(&self) -> String {
        let mut canonical = self.clone();
        canonical.mode = None;
        canonical.seed = 0;
        canonical.out = None;
        let json = serde_json::to_vec(&canonical).expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }

    pub fn training_seed(&self) -> u64 {
        self.seed
    }

    pub fn sampler_seed(&self) -> u64 {
        self.seed.wrapping_add(0x9e37_79b9_7f4a_7c15)
    }

    pub fn truth_seed(&self) -> u64 {
        self.target
            .truth_seed
            .unwrap_or(self.seed.wrapping_add(0x6a09_e667_f3bc_c908))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_fill_in() {
        let c = RunConfig::parse_str("problem = \"linear-moment\"\n").unwrap();
        assert_eq!(c.sampler.f0, 4.0);
        assert_eq!(c.solver.alpha_relax, 0.3);
        assert_eq!(c.training.nu, None);
    }

    #[test]
    fn unknown_key_is_named() {
        let e = RunConfig::parse_str("problem = \"linear-moment\"\n[sampler]\nf00 = 3.0\n").unwrap_err();
        assert!(e.to_string().contains("f00"), "{e}");
    }

    #[test]
    fn nonpositive_dt_is_rejected() {
        let e = RunConfig::parse_str("problem = \"linear-moment\"\n[sampler]\ndt = 0.0\n").unwrap_err();
        assert!(e.to_string().contains("sampler.dt"), "{e}");
    }

    #[test]
    fn hash_ignores_mode_and_seed() {
        let a = RunConfig::parse_str("problem = \"linear-moment\"\nseed = 1\nmode = \"learn\"\n").unwrap();
        let b = RunConfig::parse_str("problem = \"linear-moment\"\nseed = 2\n").unwrap();
        assert_eq!(a.hash(), b.hash());
        let c = RunConfig::parse_str("problem = \"linear-moment\"\n[solver]\ni_max = 3\n").unwrap();
        assert_ne!(a.hash(), c.hash());
    }
}
