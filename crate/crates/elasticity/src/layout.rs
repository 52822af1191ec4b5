//! Packing of one BVP realization into the physical vector
//! `x = (y^11, y^12, y^13, y^22, y^23, y^33, g_bulk, g_shear, w)`, and
//! training-set generation.

use nalgebra::{DMatrix, DVector, Matrix6};
use rayon::prelude::*;

use crate::error::{ElasticityError, Result};
use crate::fem::{self, LoadCaseSolutions};
use crate::material::{self, MaterialSample, PriorHyper};
use crate::mesh::Mesh;

pub const N_W: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Layout {
    /// Free dofs per load case.
    pub n_y: usize,
    /// Integration points.
    pub n_p: usize,
}

/// The fields of one physical vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Unpacked {
    pub y: [Vec<f64>; 6],
    pub g_bulk: Vec<f64>,
    pub g_shear: Vec<f64>,
    pub w: [f64; 3],
}

impl Layout {
    pub fn for_mesh(mesh: &Mesh) -> Self {
        Layout {
            n_y: mesh.n_free_dofs(),
            n_p: mesh.n_gauss(),
        }
    }

    /// Length of the germ block `g`.
    pub fn n_g(&self) -> usize {
        2 * self.n_p
    }

    pub fn n_x(&self) -> usize {
        6 * self.n_y + self.n_g() + N_W
    }

    pub fn pack(&self, y: &[Vec<f64>; 6], mat: &MaterialSample) -> Result<DVector<f64>> {
        if y.iter().any(|v| v.len() != self.n_y) || mat.n_points() != self.n_p {
            return Err(ElasticityError::Layout("fields do not match the layout".into()));
        }
        let mut x = Vec::with_capacity(self.n_x());
        for v in y {
            x.extend_from_slice(v);
        }
        x.extend_from_slice(mat.g_bulk());
        x.extend_from_slice(mat.g_shear());
        x.extend_from_slice(&mat.w());
        Ok(DVector::from_vec(x))
    }

    pub fn unpack(&self, x: &[f64]) -> Result<Unpacked> {
        if x.len() != self.n_x() {
            return Err(ElasticityError::Layout(format!(
                "vector has {} entries, layout expects {}",
                x.len(),
                self.n_x()
            )));
        }
        let y: [Vec<f64>; 6] = std::array::from_fn(|c| x[c * self.n_y..(c + 1) * self.n_y].to_vec());
        let g0 = 6 * self.n_y;
        let g_bulk = x[g0..g0 + self.n_p].to_vec();
        let g_shear = x[g0 + self.n_p..g0 + 2 * self.n_p].to_vec();
        let w0 = g0 + 2 * self.n_p;
        Ok(Unpacked {
            y,
            g_bulk,
            g_shear,
            w: [x[w0], x[w0 + 1], x[w0 + 2]],
        })
    }
}

/// Prior realizations and their solved load cases, one per column of `raw`.
#[derive(Debug, Clone)]
pub struct TrainingSet {
    pub layout: Layout,
    pub raw: DMatrix<f64>,
    /// Effective matrix of each realization.
    pub effective: Vec<Matrix6<f64>>,
    /// Unnormalized residue of each realization (solver accuracy).
    pub rho_hat: Vec<f64>,
}

/// One prior realization, solved.
#[derive(Debug, Clone)]
pub struct Realization {
    pub material: MaterialSample,
    pub solutions: LoadCaseSolutions,
    pub effective: Matrix6<f64>,
}

pub fn solve_realization(mesh: &Mesh, material: MaterialSample) -> Result<Realization> {
    let solutions = fem::solve_load_cases(mesh, &material)?;
    let effective = fem::effective_matrix(mesh, &material, &solutions)?;
    Ok(Realization {
        material,
        solutions,
        effective,
    })
}

/// Draws `n_d` prior realizations (realization `j` uses stream `j` of `seed`),
/// solves them and packs them as columns. Runs in parallel; the result does
/// not depend on the number of threads.
pub fn generate_training(mesh: &Mesh, hyper: &PriorHyper, n_d: usize, seed: u64) -> Result<TrainingSet> {
    if n_d < 2 {
        return Err(ElasticityError::Core(plinfer_core::Error::DegenerateTrainingSet(
            format!("need at least 2 realizations, got {n_d}"),
        )));
    }
    hyper.validate()?;
    let layout = Layout::for_mesh(mesh);
    let solved: Vec<Result<(DVector<f64>, Matrix6<f64>, f64)>> = (0..n_d)
        .into_par_iter()
        .map(|j| {
            let mat = material::sample_prior(mesh, hyper, seed, j)?;
            let r = solve_realization(mesh, mat).map_err(|e| e.for_realization(j))?;
            let x = layout.pack(&r.solutions.y, &r.material)?;
            let rho = crate::constraint::rho_hat(mesh, &r.material, &r.solutions.y);
            Ok((x, r.effective, rho))
        })
        .collect();
    let mut raw = DMatrix::zeros(layout.n_x(), n_d);
    let mut effective = Vec::with_capacity(n_d);
    let mut rho_hat = Vec::with_capacity(n_d);
    for (j, r) in solved.into_iter().enumerate() {
        let (x, c, rho) = r?;
        raw.set_column(j, &x);
        effective.push(c);
        rho_hat.push(rho);
    }
    Ok(TrainingSet {
        layout,
        raw,
        effective,
        rho_hat,
    })
}
