//! Trilinear finite elements for the six affine-Dirichlet load cases and the
//! effective elasticity matrix.
//!
//! Displacements are kept in two numberings: the full vector over all nodes
//! (`3·node + component`) and the free vector over interior nodes
//! (`3·free + component`), which is the unknown `y` of the discrete problem.
//! Load case `(m, r)` prescribes `u_j = (δ_jm ξ_r + δ_jr ξ_m)/2` on the
//! boundary, so the volume-averaged strain equals `sym(e_m ⊗ e_r)`.

use nalgebra::{Matrix3, Matrix6, SymmetricEigen};

use crate::banded::BandedSpd;
use crate::error::{ElasticityError, Result};
use crate::material::MaterialSample;
use crate::mesh::{Mesh, GAUSS_PER_ELEMENT};

/// Index pairs `(i, j)`, `i ≤ j`, in the order used for the 6×6 matrices and
/// for the load cases.
pub const PAIRS: [(usize, usize); 6] = [(0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2)];

/// Relative residual required of every linear solve.
pub const SOLVE_TOLERANCE: f64 = 1e-10;

fn check_material(mesh: &Mesh, mat: &MaterialSample) -> Result<()> {
    if mat.n_points() != mesh.n_gauss() {
        return Err(ElasticityError::Layout(format!(
            "material has {} integration points, mesh has {}",
            mat.n_points(),
            mesh.n_gauss()
        )));
    }
    Ok(())
}

/// Stiffness matrix restricted to the free dofs, in banded storage.
pub fn assemble_stiffness(mesh: &Mesh, mat: &MaterialSample) -> Result<BandedSpd> {
    check_material(mesh, mat)?;
    let mut k = BandedSpd::zeros(mesh.n_free_dofs(), mesh.half_bandwidth());
    let w = mesh.quad_weight();
    for e in 0..mesh.n_elements() {
        let free: Vec<Option<usize>> = mesh.element_nodes(e).iter().map(|&n| mesh.free_node(n)).collect();
        for q in 0..GAUSS_PER_ELEMENT {
            let p = e * GAUSS_PER_ELEMENT + q;
            let lam = mat.lame(p);
            let mu = mat.shear()[p];
            let dn = mesh.shape_grads(q);
            for a in 0..8 {
                let Some(fa) = free[a] else { continue };
                for b in 0..8 {
                    let Some(fb) = free[b] else { continue };
                    if fb > fa {
                        continue;
                    }
                    let dot = dn[a][0] * dn[b][0] + dn[a][1] * dn[b][1] + dn[a][2] * dn[b][2];
                    for i in 0..3 {
                        for kk in 0..3 {
                            let row = 3 * fa + i;
                            let col = 3 * fb + kk;
                            if col > row {
                                continue;
                            }
                            let mut v = lam * dn[a][i] * dn[b][kk] + mu * dn[a][kk] * dn[b][i];
                            if i == kk {
                                v += mu * dot;
                            }
                            k.add_lower(row, col, w * v);
                        }
                    }
                }
            }
        }
    }
    Ok(k)
}

/// Full displacement vector of load case `case` with the affine boundary
/// values and the interior set from `y` (or zero when `y` is `None`).
pub fn full_displacement(mesh: &Mesh, case: usize, y: Option<&[f64]>) -> Vec<f64> {
    let (m, r) = PAIRS[case];
    let mut u = vec![0.0; 3 * mesh.n_nodes()];
    for node in 0..mesh.n_nodes() {
        match mesh.free_node(node) {
            Some(f) => {
                if let Some(y) = y {
                    u[3 * node..3 * node + 3].copy_from_slice(&y[3 * f..3 * f + 3]);
                }
            }
            None => {
                let x = mesh.node_coords(node);
                u[3 * node + m] += 0.5 * x[r];
                u[3 * node + r] += 0.5 * x[m];
            }
        }
    }
    u
}

/// Free-dof rows of the internal force `K u` and the volume average of the
/// stress, both from one sweep over the integration points.
#[derive(Debug, Clone, PartialEq)]
pub struct Response {
    pub force: Vec<f64>,
    /// Averaged stress in [`PAIRS`] order.
    pub mean_stress: [f64; 6],
}

/// Matrix-free evaluation of the internal force and averaged stress for the
/// full displacement `u`.
pub fn response(mesh: &Mesh, mat: &MaterialSample, u: &[f64]) -> Response {
    let w = mesh.quad_weight();
    let mut force = vec![0.0; mesh.n_free_dofs()];
    let mut stress_sum = [0.0; 6];
    for e in 0..mesh.n_elements() {
        let nodes = mesh.element_nodes(e);
        let mut ue = [[0.0; 3]; 8];
        for (a, &n) in nodes.iter().enumerate() {
            ue[a].copy_from_slice(&u[3 * n..3 * n + 3]);
        }
        let free: [Option<usize>; 8] = std::array::from_fn(|a| mesh.free_node(nodes[a]));
        for q in 0..GAUSS_PER_ELEMENT {
            let p = e * GAUSS_PER_ELEMENT + q;
            let dn = mesh.shape_grads(q);
            // grad[i][j] = ∂u_i/∂x_j
            let mut grad = [[0.0; 3]; 3];
            for a in 0..8 {
                for i in 0..3 {
                    for j in 0..3 {
                        grad[i][j] += ue[a][i] * dn[a][j];
                    }
                }
            }
            let tr = grad[0][0] + grad[1][1] + grad[2][2];
            let lam = mat.lame(p);
            let mu = mat.shear()[p];
            let mut sig = [[0.0; 3]; 3];
            for i in 0..3 {
                for j in 0..3 {
                    sig[i][j] = mu * (grad[i][j] + grad[j][i]);
                }
                sig[i][i] += lam * tr;
            }
            for (k, &(i, j)) in PAIRS.iter().enumerate() {
                stress_sum[k] += w * sig[i][j];
            }
            for a in 0..8 {
                if let Some(f) = free[a] {
                    for i in 0..3 {
                        force[3 * f + i] += w * (sig[i][0] * dn[a][0] + sig[i][1] * dn[a][1] + sig[i][2] * dn[a][2]);
                    }
                }
            }
        }
    }
    let vol = mesh.volume();
    Response {
        force,
        mean_stress: stress_sum.map(|s| s / vol),
    }
}

/// Free-dof displacements of the six load cases, in [`PAIRS`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadCaseSolutions {
    pub y: [Vec<f64>; 6],
    /// Relative residual reached by each solve.
    pub residuals: [f64; 6],
}

/// Solves `A y = b` for each load case, with `b = −(K u_lift)` restricted to
/// the free dofs. Uses a banded Cholesky factor shared by the six cases and
/// falls back to conjugate gradients if the factorization breaks down or
/// misses the tolerance.
pub fn solve_load_cases(mesh: &Mesh, mat: &MaterialSample) -> Result<LoadCaseSolutions> {
    let k = assemble_stiffness(mesh, mat)?;
    let chol = k.cholesky();
    let mut ys: Vec<Vec<f64>> = Vec::with_capacity(6);
    let mut residuals = [0.0; 6];
    for case in 0..6 {
        let lift = full_displacement(mesh, case, None);
        let rhs: Vec<f64> = response(mesh, mat, &lift).force.iter().map(|f| -f).collect();
        let mut y = chol.as_ref().map(|c| c.solve(&rhs));
        let mut res = y.as_ref().map_or(f64::INFINITY, |y| k.relative_residual(y, &rhs));
        if !(res <= SOLVE_TOLERANCE) {
            let (x, r) = k.conjugate_gradient(&rhs, 0.1 * SOLVE_TOLERANCE, 20 * k.n());
            y = Some(x);
            res = r;
        }
        if !(res <= SOLVE_TOLERANCE) {
            return Err(ElasticityError::BvpSolveFailure {
                realization: None,
                message: format!("load case {case} stalled at relative residual {res:e}"),
            });
        }
        ys.push(y.expect("set above"));
        residuals[case] = res;
    }
    let y: [Vec<f64>; 6] = ys.try_into().expect("six load cases");
    Ok(LoadCaseSolutions { y, residuals })
}

/// Effective matrix before symmetrization: column `ĵ` is the averaged stress
/// under load case `ĵ`.
pub fn effective_matrix_raw(mesh: &Mesh, mat: &MaterialSample, y: &[Vec<f64>; 6]) -> Matrix6<f64> {
    let mut c = Matrix6::zeros();
    for (case, yc) in y.iter().enumerate() {
        let u = full_displacement(mesh, case, Some(yc));
        let s = response(mesh, mat, &u).mean_stress;
        for k in 0..6 {
            c[(k, case)] = s[k];
        }
    }
    c
}

/// `(C + Cᵀ)/2`.
pub fn symmetrize(c: &Matrix6<f64>) -> Matrix6<f64> {
    (c + c.transpose()) * 0.5
}

/// Symmetrized effective matrix; fails if it is not positive definite.
pub fn effective_matrix(mesh: &Mesh, mat: &MaterialSample, sols: &LoadCaseSolutions) -> Result<Matrix6<f64>> {
    check_material(mesh, mat)?;
    let c = symmetrize(&effective_matrix_raw(mesh, mat, &sols.y));
    let min = SymmetricEigen::new(c).eigenvalues.min();
    if !(min > 0.0) {
        return Err(ElasticityError::NotSpd { min_eigenvalue: min });
    }
    Ok(c)
}

/// Volume average of the strain of the full displacement `u`.
pub fn average_strain(mesh: &Mesh, u: &[f64]) -> Matrix3<f64> {
    let w = mesh.quad_weight();
    let mut acc = Matrix3::zeros();
    for e in 0..mesh.n_elements() {
        let nodes = mesh.element_nodes(e);
        for q in 0..GAUSS_PER_ELEMENT {
            let dn = mesh.shape_grads(q);
            for (a, &n) in nodes.iter().enumerate() {
                for i in 0..3 {
                    for j in 0..3 {
                        acc[(i, j)] += 0.5 * w * (u[3 * n + i] * dn[a][j] + u[3 * n + j] * dn[a][i]);
                    }
                }
            }
        }
    }
    acc / mesh.volume()
}

/// Isotropic matrix in pair indexing:
/// `C[(ij),(mr)] = λ δ_ij δ_mr + μ (δ_im δ_jr + δ_ir δ_jm)` with `λ = κ − 2μ/3`.
pub fn isotropic_matrix(bulk: f64, shear: f64) -> Matrix6<f64> {
    let lam = bulk - 2.0 * shear / 3.0;
    let d = |a: usize, b: usize| if a == b { 1.0 } else { 0.0 };
    Matrix6::from_fn(|p, q| {
        let (i, j) = PAIRS[p];
        let (m, r) = PAIRS[q];
        lam * d(i, j) * d(m, r) + shear * (d(i, m) * d(j, r) + d(i, r) * d(j, m))
    })
}

/// Upper triangle of a 6×6 matrix, row by row (21 values).
pub fn upper_triangle(c: &Matrix6<f64>) -> [f64; 21] {
    let mut out = [0.0; 21];
    let mut k = 0;
    for i in 0..6 {
        for j in i..6 {
            out[k] = c[(i, j)];
            k += 1;
        }
    }
    out
}

/// Inverse of [`upper_triangle`], mirroring into the lower triangle.
pub fn from_upper_triangle(v: &[f64]) -> Matrix6<f64> {
    let mut c = Matrix6::zeros();
    let mut k = 0;
    for i in 0..6 {
        for j in i..6 {
            c[(i, j)] = v[k];
            c[(j, i)] = v[k];
            k += 1;
        }
    }
    c
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::material::{sample_prior, PriorHyper};
    use approx::assert_relative_eq;

    #[test]
    fn stiffness_matches_matrix_free_action() {
        let mesh = Mesh::new([3, 3, 2], [1.0, 1.0, 0.1]).unwrap();
        let mat = sample_prior(&mesh, &PriorHyper::default(), 2, 0).unwrap();
        let k = assemble_stiffness(&mesh, &mat).unwrap();
        let y: Vec<f64> = (0..mesh.n_free_dofs()).map(|i| ((i * 7) % 11) as f64 - 5.0).collect();
        // a zero lift isolates the free block: take the pure-shear case and subtract its lift
        let with = response(&mesh, &mat, &full_displacement(&mesh, 0, Some(&y))).force;
        let lift = response(&mesh, &mat, &full_displacement(&mesh, 0, None)).force;
        let mut ky = vec![0.0; y.len()];
        k.mul_vec(&y, &mut ky);
        let scale = ky.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for i in 0..y.len() {
            assert!((with[i] - lift[i] - ky[i]).abs() <= 1e-12 * scale);
        }
    }

    #[test]
    fn isotropic_matrix_entries() {
        let c = isotropic_matrix(3.0, 1.5);
        assert_relative_eq!(c[(0, 0)], 5.0);
        assert_relative_eq!(c[(0, 3)], 2.0);
        assert_relative_eq!(c[(1, 1)], 1.5);
        assert_eq!(c[(1, 2)], 0.0);
    }

    #[test]
    fn upper_triangle_round_trip() {
        let c = symmetrize(&Matrix6::from_fn(|i, j| (i * 6 + j) as f64));
        assert_eq!(from_upper_triangle(&upper_triangle(&c)), c);
    }
}
