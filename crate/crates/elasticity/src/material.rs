//! Random apparent-elasticity field at the integration points.
//!
//! The mean isotropic moduli `C_bulk`, `C_shear` are Gamma distributed and
//! the dispersion level `δ_C` is uniform. Each modulus is modulated by a
//! unit-mean log-normal field `exp(σ G − σ²/2)` with `σ² = ln(1 + δ_C²)`, so
//! its pointwise coefficient of variation is `δ_C`. `G` is a unit-variance
//! Gaussian field with correlation `exp(−(π/4) Σ (τ_α / L_α)²)`, drawn by a
//! randomized spectral sum.
//!
//! A realization is stored through its germ: the Gaussian field values `G`
//! at the integration points (one field for bulk, one for shear) and the
//! control vector `w = (ln C_bulk, ln C_shear, ln δ_C)`.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal, Uniform};

use crate::error::{ElasticityError, Result};
use crate::mesh::Mesh;

pub const MEAN_BULK: f64 = 1.08974e11;
pub const MEAN_SHEAR: f64 = 6.85484e10;
pub const COV_BULK: f64 = 0.5;
pub const COV_SHEAR: f64 = 0.25;

/// Correlation lengths of the three scale-separation cases on the unit
/// plate; all of them are comparable to the domain size.
pub const CASE_LENGTHS: [[f64; 3]; 3] = [[0.1, 0.1, 0.1], [0.3, 0.3, 0.1], [0.5, 0.5, 0.2]];

#[derive(Debug, Clone, PartialEq)]
pub struct PriorHyper {
    pub corr_lengths: [f64; 3],
    pub mean_bulk: f64,
    pub mean_shear: f64,
    pub cov_bulk: f64,
    pub cov_shear: f64,
    /// `δ_C` is uniform on `[delta_lo, delta_hi]`.
    pub delta_lo: f64,
    pub delta_hi: f64,
    /// Number of random spectral modes per field.
    pub n_modes: usize,
}

impl Default for PriorHyper {
    fn default() -> Self {
        PriorHyper {
            corr_lengths: CASE_LENGTHS[0],
            mean_bulk: MEAN_BULK,
            mean_shear: MEAN_SHEAR,
            cov_bulk: COV_BULK,
            cov_shear: COV_SHEAR,
            delta_lo: 0.1,
            delta_hi: 0.5,
            n_modes: 256,
        }
    }
}

impl PriorHyper {
    pub fn with_lengths(corr_lengths: [f64; 3]) -> Self {
        PriorHyper {
            corr_lengths,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(ElasticityError::InvalidMaterial(m.to_string()));
        if self.corr_lengths.iter().any(|l| !(*l > 0.0 && l.is_finite())) {
            return bad("correlation lengths must be positive");
        }
        if !(self.mean_bulk > 0.0 && self.mean_shear > 0.0) {
            return bad("mean moduli must be positive");
        }
        if !(self.cov_bulk > 0.0 && self.cov_shear > 0.0) {
            return bad("coefficients of variation must be positive");
        }
        if !(0.0 <= self.delta_lo && self.delta_lo <= self.delta_hi && self.delta_hi.is_finite()) {
            return bad("need 0 <= delta_lo <= delta_hi");
        }
        if self.n_modes == 0 {
            return bad("need at least one spectral mode");
        }
        Ok(())
    }

    /// Log-normal shape parameter `σ` for dispersion `δ`.
    pub fn sigma_for(delta: f64) -> f64 {
        (delta * delta).ln_1p().sqrt()
    }
}

/// One realization of the Gaussian field: `G(ξ) = M^{-1/2} Σ_m a_m cos(k_m·ξ) + b_m sin(k_m·ξ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralField {
    waves: Vec<[f64; 3]>,
    a: Vec<f64>,
    b: Vec<f64>,
}

impl SpectralField {
    /// Wave vectors are drawn as standard normals scaled by `sqrt(π/2)/L_α`,
    /// so two draws with the same stream and different lengths are spatial
    /// stretches of one another.
    pub fn draw<R: Rng + ?Sized>(rng: &mut R, corr_lengths: [f64; 3], n_modes: usize) -> Self {
        let c = (std::f64::consts::PI / 2.0).sqrt();
        let mut waves = Vec::with_capacity(n_modes);
        let mut a = Vec::with_capacity(n_modes);
        let mut b = Vec::with_capacity(n_modes);
        for _ in 0..n_modes {
            let mut k = [0.0; 3];
            for (ax, k) in k.iter_mut().enumerate() {
                let z: f64 = StandardNormal.sample(rng);
                *k = z * c / corr_lengths[ax];
            }
            waves.push(k);
            a.push(StandardNormal.sample(rng));
            b.push(StandardNormal.sample(rng));
        }
        SpectralField { waves, a, b }
    }

    pub fn eval(&self, x: [f64; 3]) -> f64 {
        let mut acc = 0.0;
        for ((k, a), b) in self.waves.iter().zip(&self.a).zip(&self.b) {
            let phase = k[0] * x[0] + k[1] * x[1] + k[2] * x[2];
            let (s, c) = phase.sin_cos();
            acc += a * c + b * s;
        }
        acc / (self.waves.len() as f64).sqrt()
    }

    pub fn eval_at(&self, points: &[[f64; 3]]) -> Vec<f64> {
        points.iter().map(|&x| self.eval(x)).collect()
    }
}

/// Bulk and shear moduli at every integration point, with the germ that
/// produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct MaterialSample {
    g_bulk: Vec<f64>,
    g_shear: Vec<f64>,
    w: [f64; 3],
    bulk: Vec<f64>,
    shear: Vec<f64>,
}

impl MaterialSample {
    /// Moduli from the Gaussian germ and control vector:
    /// `κ = exp(w1 + σ g_κ − σ²/2)`, `μ = exp(w2 + σ g_μ − σ²/2)` with
    /// `σ² = ln(1 + exp(2 w3))`.
    ///
    /// Accepts any finite germ, including ones that are not prior draws, which
    /// is what the constraint evaluator feeds it.
    pub fn from_germ(g_bulk: Vec<f64>, g_shear: Vec<f64>, w: [f64; 3]) -> Result<Self> {
        if g_bulk.len() != g_shear.len() {
            return Err(ElasticityError::Layout(format!(
                "bulk germ has {} values, shear germ {}",
                g_bulk.len(),
                g_shear.len()
            )));
        }
        let sigma2 = (2.0 * w[2]).exp().ln_1p();
        let sigma = sigma2.sqrt();
        let bulk: Vec<f64> = g_bulk.iter().map(|g| (w[0] + sigma * g - 0.5 * sigma2).exp()).collect();
        let shear: Vec<f64> = g_shear
            .iter()
            .map(|g| (w[1] + sigma * g - 0.5 * sigma2).exp())
            .collect();
        let ok = |v: &f64| *v > 0.0 && v.is_finite();
        if !bulk.iter().all(ok) || !shear.iter().all(ok) {
            return Err(ElasticityError::InvalidMaterial(
                "germ maps to a zero or infinite modulus".into(),
            ));
        }
        Ok(MaterialSample {
            g_bulk,
            g_shear,
            w,
            bulk,
            shear,
        })
    }

    /// Constant moduli at `n_p` points (the zero-dispersion limit).
    pub fn homogeneous(n_p: usize, bulk: f64, shear: f64) -> Self {
        MaterialSample {
            g_bulk: vec![0.0; n_p],
            g_shear: vec![0.0; n_p],
            w: [bulk.ln(), shear.ln(), f64::NEG_INFINITY],
            bulk: vec![bulk; n_p],
            shear: vec![shear; n_p],
        }
    }

    pub fn n_points(&self) -> usize {
        self.bulk.len()
    }

    pub fn bulk(&self) -> &[f64] {
        &self.bulk
    }

    pub fn shear(&self) -> &[f64] {
        &self.shear
    }

    pub fn g_bulk(&self) -> &[f64] {
        &self.g_bulk
    }

    pub fn g_shear(&self) -> &[f64] {
        &self.g_shear
    }

    pub fn w(&self) -> [f64; 3] {
        self.w
    }

    pub fn mean_bulk(&self) -> f64 {
        self.w[0].exp()
    }

    pub fn mean_shear(&self) -> f64 {
        self.w[1].exp()
    }

    pub fn delta(&self) -> f64 {
        self.w[2].exp()
    }

    /// Lamé first parameter `κ − 2μ/3` at integration point `p`.
    #[inline]
    pub fn lame(&self, p: usize) -> f64 {
        self.bulk[p] - 2.0 * self.shear[p] / 3.0
    }
}

/// Draws one prior realization from `rng`.
pub fn sample_prior_with<R: Rng + ?Sized>(mesh: &Mesh, hyper: &PriorHyper, rng: &mut R) -> Result<MaterialSample> {
    hyper.validate()?;
    let shape_b = 1.0 / (hyper.cov_bulk * hyper.cov_bulk);
    let shape_s = 1.0 / (hyper.cov_shear * hyper.cov_shear);
    let gamma_b =
        Gamma::new(shape_b, hyper.mean_bulk / shape_b).map_err(|e| ElasticityError::InvalidMaterial(e.to_string()))?;
    let gamma_s =
        Gamma::new(shape_s, hyper.mean_shear / shape_s).map_err(|e| ElasticityError::InvalidMaterial(e.to_string()))?;
    let c_bulk = gamma_b.sample(rng);
    let c_shear = gamma_s.sample(rng);
    let delta = if hyper.delta_hi > hyper.delta_lo {
        Uniform::new_inclusive(hyper.delta_lo, hyper.delta_hi)
            .map_err(|e| ElasticityError::InvalidMaterial(e.to_string()))?
            .sample(rng)
    } else {
        hyper.delta_lo
    };

    let points = mesh.gauss_points();
    let field_b = SpectralField::draw(rng, hyper.corr_lengths, hyper.n_modes);
    let field_s = SpectralField::draw(rng, hyper.corr_lengths, hyper.n_modes);
    MaterialSample::from_germ(
        field_b.eval_at(&points),
        field_s.eval_at(&points),
        [c_bulk.ln(), c_shear.ln(), delta.ln()],
    )
}

/// Random stream used for realization `j` of a run seeded with `seed`.
pub fn realization_rng(seed: u64, j: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(j as u64);
    rng
}

/// Draws realization `j` of the run seeded with `seed`; independent of how
/// many other realizations are drawn or in which order.
pub fn sample_prior(mesh: &Mesh, hyper: &PriorHyper, seed: u64, j: usize) -> Result<MaterialSample> {
    sample_prior_with(mesh, hyper, &mut realization_rng(seed, j))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn zero_dispersion_gives_constant_field() {
        let mesh = Mesh::reduced_default();
        let hyper = PriorHyper {
            delta_lo: 0.0,
            delta_hi: 0.0,
            ..PriorHyper::default()
        };
        let m = sample_prior(&mesh, &hyper, 5, 0).unwrap();
        let c = m.mean_bulk();
        for &k in m.bulk() {
            assert_relative_eq!(k, c, max_relative = 1e-14);
        }
        assert_eq!(m.n_points(), mesh.n_gauss());
    }

    #[test]
    fn same_seed_same_sample() {
        let mesh = Mesh::reduced_default();
        let h = PriorHyper::default();
        assert_eq!(
            sample_prior(&mesh, &h, 11, 3).unwrap(),
            sample_prior(&mesh, &h, 11, 3).unwrap()
        );
        assert_ne!(
            sample_prior(&mesh, &h, 11, 3).unwrap(),
            sample_prior(&mesh, &h, 11, 4).unwrap()
        );
    }

    #[test]
    fn germ_round_trip() {
        let mesh = Mesh::reduced_default();
        let m = sample_prior(&mesh, &PriorHyper::default(), 1, 0).unwrap();
        let back = MaterialSample::from_germ(m.g_bulk().to_vec(), m.g_shear().to_vec(), m.w()).unwrap();
        for p in 0..m.n_points() {
            assert_relative_eq!(back.bulk()[p], m.bulk()[p], max_relative = 1e-14);
        }
        assert!(m.delta() >= 0.1 && m.delta() <= 0.5);
    }

    #[test]
    fn homogeneous_lame_parameter() {
        let m = MaterialSample::homogeneous(4, 3.0, 1.5);
        assert_relative_eq!(m.lame(2), 2.0);
    }
}
