//! Small dense linear-algebra helpers on top of `nalgebra`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

/// Relative threshold below which eigenvalues (singular values of a PSD
/// matrix) count as zero. Shared by the solver and the diagnostics.
pub const RANK_TOLERANCE: f64 = 1e-10;

/// Symmetric eigendecomposition with eigenvalues sorted nonincreasing and
/// eigenvectors permuted to match.
pub fn sorted_symmetric_eigen(matrix: DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let n = matrix.nrows();
    let eig = SymmetricEigen::new(matrix);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    (values, vectors)
}

/// Maximum absolute asymmetry `max |a_ij - a_ji|`.
pub fn asymmetry(matrix: &DMatrix<f64>) -> f64 {
    let n = matrix.nrows();
    let mut worst = 0.0_f64;
    for i in 0..n {
        for j in (i + 1)..n {
            worst = worst.max((matrix[(i, j)] - matrix[(j, i)]).abs());
        }
    }
    worst
}

/// Orthonormal basis of the column space of `columns`, dropping directions
/// whose squared singular value falls below `RANK_TOLERANCE` times the largest.
/// Returns an `n x 0` matrix when the span is trivial.
pub fn orthonormal_range(columns: &DMatrix<f64>) -> DMatrix<f64> {
    let n = columns.nrows();
    if columns.ncols() == 0 {
        return DMatrix::zeros(n, 0);
    }
    let gram = columns.transpose() * columns;
    let (values, vectors) = sorted_symmetric_eigen(gram);
    let top = values[0];
    if top <= 0.0 || !top.is_finite() {
        return DMatrix::zeros(n, 0);
    }
    let kept: Vec<usize> = (0..values.len())
        .filter(|&j| values[j] > RANK_TOLERANCE * top)
        .collect();
    let mut basis = DMatrix::zeros(n, kept.len());
    for (dst, &j) in kept.iter().enumerate() {
        let col = columns * vectors.column(j);
        let norm = col.norm();
        basis.set_column(dst, &(col / norm));
    }
    // One re-orthogonalization pass; the Gram route loses accuracy for the
    // smallest kept directions.
    let q = basis.clone().qr().q();
    q.columns(0, kept.len()).into_owned()
}

/// Largest singular value of a (possibly empty) matrix.
pub fn spectral_norm(matrix: &DMatrix<f64>) -> f64 {
    if matrix.nrows() == 0 || matrix.ncols() == 0 {
        return 0.0;
    }
    let small = if matrix.nrows() <= matrix.ncols() {
        matrix * matrix.transpose()
    } else {
        matrix.transpose() * matrix
    };
    let (values, _) = sorted_symmetric_eigen(small);
    values[0].max(0.0).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eigen_sorted_descending() {
        let m = DMatrix::from_row_slice(3, 3, &[1.0, 0.0, 0.0, 0.0, 3.0, 0.0, 0.0, 0.0, 2.0]);
        let (values, vectors) = sorted_symmetric_eigen(m.clone());
        assert_eq!(values.as_slice(), &[3.0, 2.0, 1.0]);
        for j in 0..3 {
            let v = vectors.column(j);
            let residual = &m * v - v * values[j];
            assert!(residual.norm() < 1e-12);
        }
    }

    #[test]
    fn range_of_rank_one() {
        let a = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 1.0, 2.0, 0.0, 0.0]);
        let q = orthonormal_range(&a);
        assert_eq!(q.ncols(), 1);
        assert!((q.column(0).norm() - 1.0).abs() < 1e-12);
        assert!(q[(2, 0)].abs() < 1e-12);
    }

    #[test]
    fn spectral_norm_of_diagonal() {
        let a = DMatrix::from_row_slice(2, 3, &[3.0, 0.0, 0.0, 0.0, -4.0, 0.0]);
        assert!((spectral_norm(&a) - 4.0).abs() < 1e-12);
        assert_eq!(spectral_norm(&DMatrix::zeros(3, 0)), 0.0);
    }
}
