//! The homogenization constraint: squared normalized residue, normalized mean
//! effective matrix and its dispersion, evaluated at reduced coordinates.

use nalgebra::{DMatrix, DVector, Matrix6};

use plinfer_core::kde::NormalizationMap;
use plinfer_core::solver::{ConstraintEvaluator, ConstraintSpec};

use crate::error::{ElasticityError, Result};
use crate::fem::{self, PAIRS};
use crate::layout::{generate_training, Layout};
use crate::material::{MaterialSample, PriorHyper};
use crate::mesh::Mesh;
use crate::report::{moment_report, MomentReport};

/// Block sizes: residue, mean matrix, dispersion.
pub const BLOCKS: [usize; 3] = [1, 21, 1];
pub const N_CONSTRAINTS: usize = 23;

/// Residue and effective matrix of arbitrary (not necessarily solved) load
/// case fields.
#[derive(Debug, Clone, PartialEq)]
pub struct PointResponse {
    /// `(Σ_cases ‖R‖² / (6 n_y))^{1/2}`.
    pub rho_hat: f64,
    /// Symmetrized effective matrix.
    pub effective: Matrix6<f64>,
}

pub fn point_response(mesh: &Mesh, mat: &MaterialSample, y: &[Vec<f64>; 6]) -> PointResponse {
    let mut sq = 0.0;
    let mut c = Matrix6::zeros();
    for (case, yc) in y.iter().enumerate() {
        let u = fem::full_displacement(mesh, case, Some(yc));
        let r = fem::response(mesh, mat, &u);
        sq += r.force.iter().map(|f| f * f).sum::<f64>();
        for k in 0..PAIRS.len() {
            c[(k, case)] = r.mean_stress[k];
        }
    }
    PointResponse {
        rho_hat: (sq / (6 * mesh.n_free_dofs()) as f64).sqrt(),
        effective: fem::symmetrize(&c),
    }
}

/// Unnormalized residue of the load-case fields `y` under `mat`.
pub fn rho_hat(mesh: &Mesh, mat: &MaterialSample, y: &[Vec<f64>; 6]) -> f64 {
    point_response(mesh, mat, y).rho_hat
}

/// Targets of the three blocks and the scales that normalize them.
#[derive(Debug, Clone, PartialEq)]
pub struct HomogenizationTargets {
    pub b_rho: f64,
    /// Target mean effective matrix (Pa).
    pub c_exp: Matrix6<f64>,
    pub delta_exp: f64,
    /// `‖c_exp‖_F`.
    pub mu_exp: f64,
    /// Frobenius norm of the training-set mean matrix.
    pub mu_eff: f64,
}

impl HomogenizationTargets {
    pub fn new(c_exp: Matrix6<f64>, delta_exp: f64, training_mean: &Matrix6<f64>) -> Result<Self> {
        let mu_exp = c_exp.norm();
        let mu_eff = training_mean.norm();
        if !(mu_exp > 0.0 && mu_eff > 0.0 && delta_exp > 0.0 && delta_exp.is_finite()) {
            return Err(ElasticityError::InvalidMaterial(
                "targets need a nonzero mean matrix and a positive dispersion".into(),
            ));
        }
        Ok(HomogenizationTargets {
            b_rho: 1.0,
            c_exp,
            delta_exp,
            mu_exp,
            mu_eff,
        })
    }

    pub fn b_c(&self) -> [f64; 21] {
        fem::upper_triangle(&(self.c_exp / self.mu_exp))
    }

    pub fn b_delta(&self) -> f64 {
        (self.mu_eff * self.delta_exp / self.mu_exp).powi(2)
    }

    pub fn vector(&self) -> DVector<f64> {
        let mut b = Vec::with_capacity(N_CONSTRAINTS);
        b.push(self.b_rho);
        b.extend_from_slice(&self.b_c());
        b.push(self.b_delta());
        DVector::from_vec(b)
    }
}

/// Targets taken from a separate batch of realizations at a "truth" setting
/// of the prior hyperparameters, standing in for experimental data.
pub fn synthetic_targets(
    mesh: &Mesh,
    truth: &PriorHyper,
    n: usize,
    seed: u64,
    training_mean: &Matrix6<f64>,
) -> Result<(HomogenizationTargets, MomentReport)> {
    let batch = generate_training(mesh, truth, n, seed)?;
    let report = moment_report(&batch.effective)?;
    let targets = HomogenizationTargets::new(report.mean, report.delta_eff, training_mean)?;
    Ok((targets, report))
}

/// `η ↦ (ρ², upper(C/μ_exp), ‖C/μ_exp − C̄_d/μ_exp‖²_F)`, reconstructing the
/// physical fields through the normalization map.
///
/// The residue block is divided by `ρ̂₀²`, where `ρ̂₀` is the mean residue
/// over the first-iteration learned set; until [`calibrate`] has run it is
/// left unnormalized.
///
/// [`calibrate`]: ConstraintEvaluator::calibrate
#[derive(Debug, Clone)]
pub struct HomogenizationEvaluator {
    mesh: Mesh,
    layout: Layout,
    mean: DVector<f64>,
    /// `Φ diag(κ)^{1/2}`.
    recon: DMatrix<f64>,
    mu_exp: f64,
    /// Training-set mean matrix over `μ_exp`, held fixed.
    c_bar_n: Matrix6<f64>,
    rho0: Option<f64>,
}

impl HomogenizationEvaluator {
    pub fn new(
        mesh: Mesh,
        norm: &NormalizationMap<f64>,
        targets: &HomogenizationTargets,
        training_mean: &Matrix6<f64>,
    ) -> Result<Self> {
        let layout = Layout::for_mesh(&mesh);
        if norm.physical_dim() != layout.n_x() {
            return Err(ElasticityError::Layout(format!(
                "normalization acts on {}-vectors, the mesh layout has {}",
                norm.physical_dim(),
                layout.n_x()
            )));
        }
        Ok(HomogenizationEvaluator {
            mesh,
            layout,
            mean: norm.mean().clone(),
            recon: norm.reconstruction_operator(),
            mu_exp: targets.mu_exp,
            c_bar_n: training_mean / targets.mu_exp,
            rho0: None,
        })
    }

    pub fn rho0(&self) -> Option<f64> {
        self.rho0
    }

    pub fn set_rho0(&mut self, rho0: f64) {
        self.rho0 = Some(rho0);
    }

    pub fn layout(&self) -> Layout {
        self.layout
    }

    /// Physical vector `x̄ + Φ κ^{1/2} η`.
    pub fn reconstruct(&self, eta: &DVector<f64>) -> DVector<f64> {
        &self.mean + &self.recon * eta
    }

    /// Residue and effective matrix at reduced point `eta`.
    pub fn response(&self, eta: &DVector<f64>) -> Result<PointResponse> {
        if eta.len() != self.recon.ncols() {
            return Err(ElasticityError::Layout(format!(
                "point has dimension {}, expected {}",
                eta.len(),
                self.recon.ncols()
            )));
        }
        let x = self.reconstruct(eta);
        let f = self.layout.unpack(x.as_slice())?;
        let mat = MaterialSample::from_germ(f.g_bulk, f.g_shear, f.w)?;
        Ok(point_response(&self.mesh, &mat, &f.y))
    }
}

impl ConstraintEvaluator<f64> for HomogenizationEvaluator {
    fn n_constraints(&self) -> usize {
        N_CONSTRAINTS
    }

    fn evaluate(&self, eta: &DVector<f64>) -> plinfer_core::Result<DVector<f64>> {
        let r = self
            .response(eta)
            .map_err(|e| plinfer_core::Error::ConstraintEvaluation {
                point: 0,
                message: e.to_string(),
            })?;
        let scale = self.rho0.unwrap_or(1.0);
        let cn = r.effective / self.mu_exp;
        let mut h = Vec::with_capacity(N_CONSTRAINTS);
        h.push((r.rho_hat / scale).powi(2));
        h.extend_from_slice(&fem::upper_triangle(&cn));
        h.push((cn - self.c_bar_n).norm_squared());
        Ok(DVector::from_vec(h))
    }

    fn calibrate(&mut self, values: &mut DMatrix<f64>) -> plinfer_core::Result<()> {
        let prev = self.rho0.unwrap_or(1.0);
        let n = values.ncols();
        let rho0 = values.row(0).iter().map(|v| v.sqrt() * prev).sum::<f64>() / n as f64;
        if !(rho0 > 0.0 && rho0.is_finite()) {
            return Err(plinfer_core::Error::InvalidConfig(format!(
                "first-iteration mean residue is {rho0:e}; cannot normalize"
            )));
        }
        let factor = (prev / rho0).powi(2);
        for v in values.row_mut(0).iter_mut() {
            *v *= factor;
        }
        self.rho0 = Some(rho0);
        Ok(())
    }
}

/// Assembled spec: blocks `{1, 21, 1}`, unit weights, residue block left out
/// of the error function.
pub fn homogenization_spec(
    evaluator: HomogenizationEvaluator,
    targets: &HomogenizationTargets,
) -> Result<ConstraintSpec<f64>> {
    let spec = ConstraintSpec::new(Box::new(evaluator), BLOCKS.to_vec(), targets.vector())?
        .with_included(vec![false, true, true])?;
    Ok(spec)
}
