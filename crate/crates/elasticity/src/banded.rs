//! Symmetric positive definite banded matrices: in-place Cholesky for the
//! direct solve and a Jacobi-preconditioned conjugate gradient fallback.

/// Lower band of a symmetric `n × n` matrix with half-bandwidth `bw`.
/// Row `i` stores columns `i - bw ..= i` at offsets `0..=bw`; entries with a
/// negative column index are unused.
#[derive(Debug, Clone, PartialEq)]
pub struct BandedSpd {
    n: usize,
    bw: usize,
    data: Vec<f64>,
}

impl BandedSpd {
    pub fn zeros(n: usize, bw: usize) -> Self {
        BandedSpd {
            n,
            bw,
            data: vec![0.0; n * (bw + 1)],
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn half_bandwidth(&self) -> usize {
        self.bw
    }

    #[inline]
    fn slot(&self, i: usize, j: usize) -> usize {
        debug_assert!(j <= i && i - j <= self.bw);
        i * (self.bw + 1) + (self.bw - (i - j))
    }

    /// Entry `(i, j)` of the full symmetric matrix.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (i, j) = if i >= j { (i, j) } else { (j, i) };
        if i - j > self.bw {
            0.0
        } else {
            self.data[self.slot(i, j)]
        }
    }

    /// Adds `v` to entry `(i, j)`; only the lower triangle is stored, so
    /// callers add each off-diagonal pair once with `i >= j`.
    #[inline]
    pub fn add_lower(&mut self, i: usize, j: usize, v: f64) {
        let s = self.slot(i, j);
        self.data[s] += v;
    }

    pub fn mul_vec(&self, x: &[f64], y: &mut [f64]) {
        y.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..self.n {
            let lo = i.saturating_sub(self.bw);
            let base = i * (self.bw + 1) + self.bw - i;
            let mut acc = self.data[i * (self.bw + 1) + self.bw] * x[i];
            for j in lo..i {
                let a = self.data[base + j];
                acc += a * x[j];
                y[j] += a * x[i];
            }
            y[i] += acc;
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.data[i * (self.bw + 1) + self.bw]).collect()
    }

    /// Cholesky factor `L` with `A = L Lᵀ`, or `None` if a pivot is not
    /// positive.
    pub fn cholesky(&self) -> Option<BandedCholesky> {
        let mut l = self.data.clone();
        let w = self.bw + 1;
        for i in 0..self.n {
            let lo = i.saturating_sub(self.bw);
            for j in lo..=i {
                // L[i][j] = (A[i][j] - Σ_k L[i][k] L[j][k]) / L[j][j]
                let klo = lo.max(j.saturating_sub(self.bw));
                let mut s = l[i * w + self.bw + j - i];
                for k in klo..j {
                    s -= l[i * w + self.bw + k - i] * l[j * w + self.bw + k - j];
                }
                if j == i {
                    if !(s > 0.0) {
                        return None;
                    }
                    l[i * w + self.bw] = s.sqrt();
                } else {
                    l[i * w + self.bw + j - i] = s / l[j * w + self.bw];
                }
            }
        }
        Some(BandedCholesky {
            n: self.n,
            bw: self.bw,
            l,
        })
    }

    /// Relative residual `‖A x − b‖ / ‖b‖`.
    pub fn relative_residual(&self, x: &[f64], b: &[f64]) -> f64 {
        let mut ax = vec![0.0; self.n];
        self.mul_vec(x, &mut ax);
        let r: f64 = ax.iter().zip(b).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        let nb: f64 = b.iter().map(|v| v * v).sum::<f64>().sqrt();
        if nb == 0.0 {
            r
        } else {
            r / nb
        }
    }

    /// Jacobi-preconditioned conjugate gradient from a zero initial guess.
    /// Returns the iterate and its relative residual.
    pub fn conjugate_gradient(&self, b: &[f64], rel_tol: f64, max_iter: usize) -> (Vec<f64>, f64) {
        let n = self.n;
        let inv_diag: Vec<f64> = self
            .diagonal()
            .iter()
            .map(|d| if *d > 0.0 { 1.0 / d } else { 1.0 })
            .collect();
        let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt();
        let mut x = vec![0.0; n];
        if nb == 0.0 {
            return (x, 0.0);
        }
        let mut r = b.to_vec();
        let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(r, d)| r * d).collect();
        let mut p = z.clone();
        let mut ap = vec![0.0; n];
        let mut rz: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
        for _ in 0..max_iter {
            self.mul_vec(&p, &mut ap);
            let pap: f64 = p.iter().zip(&ap).map(|(a, b)| a * b).sum();
            if !(pap > 0.0) {
                break;
            }
            let alpha = rz / pap;
            for i in 0..n {
                x[i] += alpha * p[i];
                r[i] -= alpha * ap[i];
            }
            let rn = r.iter().map(|v| v * v).sum::<f64>().sqrt();
            if rn <= rel_tol * nb {
                break;
            }
            for i in 0..n {
                z[i] = r[i] * inv_diag[i];
            }
            let rz_new: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
            let beta = rz_new / rz;
            rz = rz_new;
            for i in 0..n {
                p[i] = z[i] + beta * p[i];
            }
        }
        let res = self.relative_residual(&x, b);
        (x, res)
    }
}

#[derive(Debug, Clone)]
pub struct BandedCholesky {
    n: usize,
    bw: usize,
    l: Vec<f64>,
}

impl BandedCholesky {
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let w = self.bw + 1;
        let mut y = b.to_vec();
        for i in 0..self.n {
            let lo = i.saturating_sub(self.bw);
            let mut s = y[i];
            for k in lo..i {
                s -= self.l[i * w + self.bw + k - i] * y[k];
            }
            y[i] = s / self.l[i * w + self.bw];
        }
        for i in (0..self.n).rev() {
            let hi = (i + self.bw).min(self.n - 1);
            let mut s = y[i];
            for k in i + 1..=hi {
                s -= self.l[k * w + self.bw + i - k] * y[k];
            }
            y[i] = s / self.l[i * w + self.bw];
        }
        y
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn laplacian(n: usize) -> BandedSpd {
        let mut a = BandedSpd::zeros(n, 2);
        for i in 0..n {
            a.add_lower(i, i, 4.0);
            if i >= 1 {
                a.add_lower(i, i - 1, -1.0);
            }
            if i >= 2 {
                a.add_lower(i, i - 2, 0.5);
            }
        }
        a
    }

    #[test]
    fn cholesky_solves_against_dense() {
        let a = laplacian(12);
        let dense = nalgebra::DMatrix::from_fn(12, 12, |i, j| a.get(i, j));
        let b: Vec<f64> = (0..12).map(|i| (i as f64 * 0.7).sin()).collect();
        let x = a.cholesky().unwrap().solve(&b);
        let expected = dense.cholesky().unwrap().solve(&nalgebra::DVector::from_vec(b.clone()));
        for i in 0..12 {
            assert_relative_eq!(x[i], expected[i], epsilon = 1e-13);
        }
        assert!(a.relative_residual(&x, &b) < 1e-14);
    }

    #[test]
    fn conjugate_gradient_agrees_with_cholesky() {
        let a = laplacian(30);
        let b: Vec<f64> = (0..30).map(|i| 1.0 + i as f64).collect();
        let direct = a.cholesky().unwrap().solve(&b);
        let (x, res) = a.conjugate_gradient(&b, 1e-12, 500);
        assert!(res < 1e-11);
        for i in 0..30 {
            assert_relative_eq!(x[i], direct[i], epsilon = 1e-9);
        }
    }

    #[test]
    fn indefinite_matrix_has_no_factor() {
        let mut a = BandedSpd::zeros(2, 1);
        a.add_lower(0, 0, 1.0);
        a.add_lower(1, 0, 2.0);
        a.add_lower(1, 1, 1.0);
        assert!(a.cholesky().is_none());
    }
}
