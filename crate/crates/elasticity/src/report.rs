//! Second-order statistics of a batch of effective matrices.

use nalgebra::Matrix6;

use crate::error::{ElasticityError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct MomentReport {
    pub mean: Matrix6<f64>,
    /// `‖mean‖_F`.
    pub frobenius: f64,
    /// `Δ₂ = ‖C − mean‖²_F / ‖mean‖²_F` per sample.
    pub delta2: Vec<f64>,
    /// `sqrt(E{Δ₂})`.
    pub delta_eff: f64,
    /// `sqrt` of the mode of the kernel density estimate of `Δ₂`.
    pub delta_ml: f64,
    /// Kernel bandwidth used for the density of `Δ₂`.
    pub bandwidth: f64,
}

impl MomentReport {
    /// Kernel density of `Δ₂` on `n` equispaced points spanning the samples
    /// plus three bandwidths on each side.
    pub fn delta2_pdf(&self, n: usize) -> Vec<(f64, f64)> {
        let (lo, hi) = span(&self.delta2, self.bandwidth);
        grid(lo, hi, n)
            .map(|x| (x, kde_density(&self.delta2, self.bandwidth, x)))
            .collect()
    }
}

/// Statistics about the sample mean of `samples`.
pub fn moment_report(samples: &[Matrix6<f64>]) -> Result<MomentReport> {
    if samples.len() < 2 {
        return Err(ElasticityError::InvalidMaterial(format!(
            "moment report needs at least 2 samples, got {}",
            samples.len()
        )));
    }
    let mean = samples.iter().sum::<Matrix6<f64>>() / samples.len() as f64;
    moment_report_about(samples, &mean)
}

/// Statistics with `Δ₂` measured about a given reference mean.
pub fn moment_report_about(samples: &[Matrix6<f64>], reference: &Matrix6<f64>) -> Result<MomentReport> {
    if samples.is_empty() {
        return Err(ElasticityError::InvalidMaterial("moment report needs samples".into()));
    }
    let mean = samples.iter().sum::<Matrix6<f64>>() / samples.len() as f64;
    let ref_sq = reference.norm_squared();
    if !(ref_sq > 0.0) {
        return Err(ElasticityError::InvalidMaterial("reference mean matrix is zero".into()));
    }
    let delta2: Vec<f64> = samples
        .iter()
        .map(|c| (c - reference).norm_squared() / ref_sq)
        .collect();
    let delta_eff = (delta2.iter().sum::<f64>() / delta2.len() as f64).sqrt();
    let bandwidth = silverman_bandwidth(&delta2);
    let delta_ml = kde_mode(&delta2, bandwidth).max(0.0).sqrt();
    Ok(MomentReport {
        mean,
        frobenius: mean.norm(),
        delta2,
        delta_eff,
        delta_ml,
        bandwidth,
    })
}

/// `σ (4/(3n))^{1/5}` with `σ` the unbiased sample standard deviation. Falls
/// back to a tiny positive width for a constant sample.
pub fn silverman_bandwidth(x: &[f64]) -> f64 {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    let var = if x.len() > 1 {
        x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    let h = var.sqrt() * (4.0 / (3.0 * n)).powf(0.2);
    if h > 0.0 {
        h
    } else {
        f64::MIN_POSITIVE.max(1e-300 * m.abs())
    }
}

fn kde_density(x: &[f64], h: f64, at: f64) -> f64 {
    let norm = 1.0 / (x.len() as f64 * h * (2.0 * std::f64::consts::PI).sqrt());
    norm * x.iter().map(|v| (-0.5 * ((at - v) / h).powi(2)).exp()).sum::<f64>()
}

fn span(x: &[f64], h: f64) -> (f64, f64) {
    let lo = x.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (lo - 3.0 * h, hi + 3.0 * h)
}

fn grid(lo: f64, hi: f64, n: usize) -> impl Iterator<Item = f64> {
    let step = if n > 1 { (hi - lo) / (n - 1) as f64 } else { 0.0 };
    (0..n).map(move |k| lo + step * k as f64)
}

/// Argmax of the kernel density: a grid scan followed by a golden-section
/// refinement inside the best grid cell.
pub fn kde_mode(x: &[f64], h: f64) -> f64 {
    let lo = x.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi - lo <= 0.0 {
        return lo;
    }
    const N: usize = 2001;
    let step = (hi - lo) / (N - 1) as f64;
    let (mut best, mut best_f) = (lo, f64::NEG_INFINITY);
    for x0 in grid(lo, hi, N) {
        let f = kde_density(x, h, x0);
        if f > best_f {
            best = x0;
            best_f = f;
        }
    }
    let (mut a, mut b) = (best - step, best + step);
    let phi = 0.5 * (5f64.sqrt() - 1.0);
    for _ in 0..60 {
        let c = b - phi * (b - a);
        let d = a + phi * (b - a);
        if kde_density(x, h, c) >= kde_density(x, h, d) {
            b = d;
        } else {
            a = c;
        }
    }
    0.5 * (a + b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn base() -> Matrix6<f64> {
        Matrix6::from_fn(|i, j| if i == j { 2.0 + i as f64 } else { 0.1 * (i + j) as f64 })
    }

    #[test]
    fn identical_samples_have_no_dispersion() {
        let r = moment_report(&[base(), base(), base()]).unwrap();
        // the mean of identical matrices can differ from them by one ulp
        assert!(r.delta_eff < 1e-15);
        assert!(r.delta2.iter().all(|d| *d < 1e-30));
        assert_relative_eq!(r.frobenius, base().norm(), max_relative = 1e-15);
    }

    #[test]
    fn symmetric_perturbations_give_exact_dispersion() {
        let c = base();
        let samples: Vec<_> = (0..10).map(|k| c * if k % 2 == 0 { 1.1 } else { 0.9 }).collect();
        let r = moment_report(&samples).unwrap();
        assert_relative_eq!(r.delta_eff, 0.1, max_relative = 1e-12);
    }

    #[test]
    fn needs_two_samples() {
        assert!(moment_report(&[base()]).is_err());
    }

    #[test]
    fn mode_of_a_symmetric_sample() {
        let x: Vec<f64> = (0..201).map(|k| 1.0 + ((k as f64 - 100.0) / 40.0).powi(3)).collect();
        assert_relative_eq!(kde_mode(&x, silverman_bandwidth(&x)), 1.0, epsilon = 0.05);
    }
}
