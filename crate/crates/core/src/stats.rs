//! Small sample-statistics helpers over column-sample matrices.

use nalgebra::{DMatrix, DVector};

use crate::scalar::Real;

/// Unbiased covariance of the columns of `samples` (`dim × N`), filled so the
/// result is exactly symmetric.
pub fn covariance<T: Real>(samples: &DMatrix<T>) -> DMatrix<T> {
    let (dim, n) = samples.shape();
    let mean = mean(samples);
    let mut centered = samples.clone();
    for mut col in centered.column_iter_mut() {
        col -= &mean;
    }
    let denom = T::from_count(n.saturating_sub(1).max(1));
    let mut cov = DMatrix::zeros(dim, dim);
    for i in 0..dim {
        for j in 0..=i {
            let v = centered.row(i).dot(&centered.row(j)) / denom;
            cov[(i, j)] = v;
            cov[(j, i)] = v;
        }
    }
    cov
}

/// Column mean computed as a sum followed by one division.
pub fn mean<T: Real>(samples: &DMatrix<T>) -> DVector<T> {
    let n = T::from_count(samples.ncols().max(1));
    samples.column_sum() / n
}
