//! Kernel-weighted (Nadaraya-Watson) surrogate of the constraint map and its
//! explicit gradient.
//!
//! Given anchors `η^ℓ` (a learned set) and the constraint values
//! `a^ℓ = h(η^ℓ)`, the surrogate is the convex combination
//! `ĥ(η) = Σ_ℓ w_ℓ(η) a^ℓ` with softmax weights
//! `w_ℓ ∝ exp(-‖η^ℓ − η‖²_σ / (2 s_SB²))`, where `‖·‖_σ` scales each component
//! by the anchors' standard deviation and `s_SB` is the Silverman bandwidth in
//! dimension `n_c + ν`. Weights are formed in the log domain, so probes far
//! from every anchor fall back to the nearest anchor instead of `0/0`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Silverman bandwidth of the surrogate kernel for `n` anchors.
pub fn surrogate_bandwidth<T: Real>(n: usize, n_c: usize, nu: usize) -> T {
    let d = T::from_count(n_c + nu);
    (T::lit(4.0) / (T::from_count(n) * (T::lit(2.0) + d))).powf(T::one() / (d + T::lit(4.0)))
}

/// Independent accumulators per reduction; breaks the add-latency chain and
/// lets the loops vectorize while keeping a fixed summation order.
const LANES: usize = 8;

fn lane_sum<T: Real>(acc: &[T; LANES]) -> T {
    ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]))
}

#[derive(Debug, Clone)]
pub struct SurrogateModel<T: Real> {
    anchors: DMatrix<T>,
    values: DMatrix<T>,
    sigma: DVector<T>,
    s_sb: T,
    /// Anchors divided componentwise by `σ_α s_SB`, stored `N × ν` so each
    /// component is contiguous over anchors.
    scaled_t: DMatrix<T>,
    /// `1 / (σ_α s_SB)`.
    inv_width: DVector<T>,
}

impl<T: Real> SurrogateModel<T> {
    /// `anchors` is `ν × N`, `values` is `n_c × N`; column `ℓ` of `values` is
    /// the constraint evaluated at column `ℓ` of `anchors`.
    pub fn build(anchors: DMatrix<T>, values: DMatrix<T>) -> Result<Self> {
        let (nu, n) = anchors.shape();
        if values.ncols() != n {
            return Err(Error::DimensionMismatch(format!(
                "{n} anchors but {} value columns",
                values.ncols()
            )));
        }
        if n < 2 || nu == 0 || values.nrows() == 0 {
            return Err(Error::DimensionMismatch(format!(
                "surrogate needs N >= 2, nu >= 1, n_c >= 1 (got N={n}, nu={nu}, n_c={})",
                values.nrows()
            )));
        }
        let denom = T::from_count(n - 1);
        let mean = anchors.column_mean();
        let mut sigma = DVector::zeros(nu);
        for (a, row) in anchors.row_iter().enumerate() {
            let var = row
                .iter()
                .fold(T::zero(), |acc, &v| acc + (v - mean[a]) * (v - mean[a]))
                / denom;
            // a constant row still leaves rounding residue in the mean
            let scale = row.amax();
            if !(var.sqrt() > T::lit(1e-12) * scale) {
                return Err(Error::ZeroVarianceComponent { component: a });
            }
            sigma[a] = var.sqrt();
        }
        let s_sb = surrogate_bandwidth(n, values.nrows(), nu);
        let inv_width = sigma.map(|sd| T::one() / (sd * s_sb));
        let mut scaled_t = anchors.transpose();
        for (mut col, iw) in scaled_t.column_iter_mut().zip(inv_width.iter()) {
            col *= *iw;
        }
        Ok(SurrogateModel {
            anchors,
            values,
            sigma,
            s_sb,
            scaled_t,
            inv_width,
        })
    }

    pub fn dim(&self) -> usize {
        self.anchors.nrows()
    }

    pub fn n_constraints(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_anchors(&self) -> usize {
        self.anchors.ncols()
    }

    pub fn anchors(&self) -> &DMatrix<T> {
        &self.anchors
    }

    pub fn values(&self) -> &DMatrix<T> {
        &self.values
    }

    /// Per-component standard deviations of the anchors.
    pub fn sigma(&self) -> &DVector<T> {
        &self.sigma
    }

    pub fn bandwidth(&self) -> T {
        self.s_sb
    }

    fn scale_probe(&self, eta: &[T], z: &mut [T]) {
        for ((zi, e), iw) in z.iter_mut().zip(eta).zip(self.inv_width.iter()) {
            *zi = *e * *iw;
        }
    }

    /// Overwrites `w` with unnormalized weights, the largest of which is
    /// exactly one, and returns their sum.
    fn raw_weights(&self, z: &[T], w: &mut [T]) -> T {
        w.iter_mut().for_each(|v| *v = T::zero());
        for (col, &za) in self.scaled_t.column_iter().zip(z) {
            for (q, &a) in w.iter_mut().zip(col.as_slice()) {
                let d = a - za;
                *q += d * d;
            }
        }
        let mut lo = [T::lit(f64::INFINITY); LANES];
        let mut chunks = w.chunks_exact(LANES);
        for ch in &mut chunks {
            for k in 0..LANES {
                lo[k] = if ch[k] < lo[k] { ch[k] } else { lo[k] };
            }
        }
        for (k, &q) in chunks.remainder().iter().enumerate() {
            lo[k] = if q < lo[k] { q } else { lo[k] };
        }
        let qmin = lo
            .iter()
            .copied()
            .fold(T::lit(f64::INFINITY), |m, q| if q < m { q } else { m });

        let half = T::lit(0.5);
        let mut acc = [T::zero(); LANES];
        let mut chunks = w.chunks_exact_mut(LANES);
        for ch in &mut chunks {
            for k in 0..LANES {
                ch[k] = T::exp_weight(half * (qmin - ch[k]));
                acc[k] += ch[k];
            }
        }
        for (k, q) in chunks.into_remainder().iter_mut().enumerate() {
            *q = T::exp_weight(half * (qmin - *q));
            acc[k] += *q;
        }
        lane_sum(&acc)
    }

    /// Normalized kernel weights at `eta`; they sum to one.
    pub fn weights(&self, eta: &DVector<T>) -> DVector<T> {
        let mut z = vec![T::zero(); self.dim()];
        self.scale_probe(eta.as_slice(), &mut z);
        let mut w = DVector::zeros(self.n_anchors());
        let total = self.raw_weights(&z, w.as_mut_slice());
        w / total
    }

    /// Surrogate value `ĥ(η) ∈ R^{n_c}`.
    pub fn eval(&self, eta: &DVector<T>) -> DVector<T> {
        &self.values * self.weights(eta)
    }

    /// Gradient `[∇_η ĥ(η)]` as a `ν × n_c` matrix: entry `(α, k)` is
    /// `∂ĥ_k/∂η_α`.
    pub fn grad(&self, eta: &DVector<T>) -> DMatrix<T> {
        let w = self.weights(eta);
        let h = &self.values * &w;
        let mut g = DMatrix::zeros(self.dim(), self.n_constraints());
        // d_ℓ = (η^ℓ − η) / (σ² s²); γ_ℓ = w_ℓ (d_ℓ − Σ w d) so that
        // Σ_ℓ γ_ℓ a_ℓᵀ = Σ_ℓ w_ℓ d_ℓ (a_ℓ − ĥ)ᵀ.
        for l in 0..self.n_anchors() {
            let wl = w[l];
            if wl == T::zero() {
                continue;
            }
            let a = self.anchors.column(l);
            let v = self.values.column(l);
            for alpha in 0..self.dim() {
                let s = self.sigma[alpha] * self.s_sb;
                let d = wl * (a[alpha] - eta[alpha]) / (s * s);
                for k in 0..self.n_constraints() {
                    g[(alpha, k)] += d * (v[k] - h[k]);
                }
            }
        }
        g
    }

    /// Gradient contracted with a fixed multiplier, `[∇ĥ] λ`, prepared for
    /// repeated evaluation inside the sampler.
    pub fn project(&self, lambda: &DVector<T>) -> Result<ProjectedSurrogate<'_, T>> {
        if lambda.len() != self.n_constraints() {
            return Err(Error::DimensionMismatch(format!(
                "lambda has {} entries, surrogate has {} constraints",
                lambda.len(),
                self.n_constraints()
            )));
        }
        // Centering the contracted values leaves the gradient unchanged and
        // avoids cancellation in the weighted covariance below.
        let mut c = self.values.tr_mul(lambda);
        let mean = c.mean();
        c.add_scalar_mut(-mean);
        Ok(ProjectedSurrogate { model: self, c })
    }
}

/// A surrogate with its values contracted against `λ`: `c_ℓ = ⟨a_ℓ, λ⟩`.
#[derive(Debug, Clone)]
pub struct ProjectedSurrogate<'a, T: Real> {
    model: &'a SurrogateModel<T>,
    c: DVector<T>,
}

impl<T: Real> ProjectedSurrogate<'_, T> {
    /// Writes `[∇ĥ(η)] λ` into `out`. `scratch` must hold `ν + N` entries.
    ///
    /// With `z = η / (σ s_SB)`, `[∇ĥ] λ` reduces to the weighted covariance
    /// between `c_ℓ` and `z^ℓ`, scaled by `1 / (σ_α s_SB)`.
    pub fn grad_dot_into(&self, eta: &[T], scratch: &mut [T], out: &mut [T]) {
        let m = self.model;
        let nu = m.dim();
        let (z, rest) = scratch.split_at_mut(nu);
        let w = &mut rest[..m.n_anchors()];
        m.scale_probe(eta, z);
        let s0 = m.raw_weights(z, w);
        let c = self.c.as_slice();
        let mut acc = [T::zero(); LANES];
        let mut tail = T::zero();
        let mut wc_chunks = w.chunks_exact(LANES).zip(c.chunks_exact(LANES));
        for (wch, cch) in &mut wc_chunks {
            for k in 0..LANES {
                acc[k] += wch[k] * cch[k];
            }
        }
        let split = w.len() - w.len() % LANES;
        for (&wl, &cl) in w[split..].iter().zip(&c[split..]) {
            tail += wl * cl;
        }
        let mean_c = (lane_sum(&acc) + tail) / s0;

        // Per component: Σ w (z^ℓ − z) and Σ w c (z^ℓ − z).
        for (((col, &za), o), &iw) in m
            .scaled_t
            .column_iter()
            .zip(z.iter())
            .zip(out.iter_mut())
            .zip(m.inv_width.iter())
        {
            let a = col.as_slice();
            let mut sd = [T::zero(); LANES];
            let mut scd = [T::zero(); LANES];
            for ((ach, wch), cch) in a
                .chunks_exact(LANES)
                .zip(w.chunks_exact(LANES))
                .zip(c.chunks_exact(LANES))
            {
                for k in 0..LANES {
                    let wd = wch[k] * (ach[k] - za);
                    sd[k] += wd;
                    scd[k] += wd * cch[k];
                }
            }
            let (mut sd_t, mut scd_t) = (T::zero(), T::zero());
            for ((&al, &wl), &cl) in a[split..].iter().zip(&w[split..]).zip(&c[split..]) {
                let wd = wl * (al - za);
                sd_t += wd;
                scd_t += wd * cl;
            }
            let sd = lane_sum(&sd) + sd_t;
            let scd = lane_sum(&scd) + scd_t;
            *o = (scd / s0 - mean_c * sd / s0) * iw;
        }
    }

    pub fn grad_dot(&self, eta: &DVector<T>) -> DVector<T> {
        let nu = self.model.dim();
        let mut scratch = vec![T::zero(); self.scratch_len()];
        let mut out = DVector::zeros(nu);
        self.grad_dot_into(eta.as_slice(), &mut scratch, out.as_mut_slice());
        out
    }

    pub fn scratch_len(&self) -> usize {
        self.model.dim() + self.model.n_anchors()
    }
}
