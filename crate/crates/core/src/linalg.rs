//! Small dense linear-algebra helpers shared by the filters.

use nalgebra::{DMatrix, DVector};

/// Relative singular-value cutoff used by [`pinv`].
pub const PINV_RTOL: f64 = 1e-12;

/// Result of a guarded inversion.
#[derive(Debug, Clone)]
pub struct Inverse {
    pub matrix: DMatrix<f64>,
    /// True when at least one singular value was truncated.
    pub truncated: bool,
}

/// Moore-Penrose pseudo-inverse by SVD, discarding singular values below
/// `PINV_RTOL * sigma_max`.
pub fn pinv(m: &DMatrix<f64>) -> Inverse {
    let (rows, cols) = m.shape();
    if rows == 0 || cols == 0 {
        return Inverse {
            matrix: DMatrix::zeros(cols, rows),
            truncated: false,
        };
    }
    let svd = m.clone().svd(true, true);
    let u = svd.u.as_ref().expect("svd computed with u");
    let v_t = svd.v_t.as_ref().expect("svd computed with v_t");
    let sigma_max = svd.singular_values.iter().cloned().fold(0.0_f64, f64::max);
    let cutoff = PINV_RTOL * sigma_max;
    let mut truncated = false;
    let mut out = DMatrix::zeros(cols, rows);
    for (i, &s) in svd.singular_values.iter().enumerate() {
        if s > cutoff && s > 0.0 {
            let vi = v_t.row(i).transpose();
            let ui = u.column(i);
            out += (vi * ui.transpose()) / s;
        } else {
            truncated = true;
        }
    }
    Inverse {
        matrix: out,
        truncated,
    }
}

/// Inverse of a symmetric matrix that is expected to be positive definite.
///
/// Uses a Cholesky factorization when it succeeds and falls back to the
/// pseudo-inverse otherwise.
pub fn spd_inverse_or_pinv(m: &DMatrix<f64>) -> Inverse {
    if let Some(chol) = m.clone().cholesky() {
        Inverse {
            matrix: symmetrize(&chol.inverse()),
            truncated: false,
        }
    } else {
        let mut inv = pinv(m);
        inv.matrix = symmetrize(&inv.matrix);
        // Not PD: report the fallback even when no singular value was cut.
        inv.truncated = true;
        inv
    }
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// `v^T W v`.
pub fn quad_form(v: &DVector<f64>, w: &DMatrix<f64>) -> f64 {
    (v.transpose() * w * v)[(0, 0)]
}

/// Largest absolute entry of `a - b`.
pub fn max_abs_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// Largest absolute entry of `m - m^T`.
pub fn asymmetry(m: &DMatrix<f64>) -> f64 {
    max_abs_diff(m, &m.transpose())
}

/// Smallest eigenvalue of the symmetric part of `m`.
pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return f64::INFINITY;
    }
    symmetrize(m)
        .symmetric_eigenvalues()
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min)
}

pub fn is_symmetric(m: &DMatrix<f64>, tol: f64) -> bool {
    m.is_square() && asymmetry(m) <= tol * (1.0 + m.amax())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pinv_of_invertible_is_inverse() {
        let m = DMatrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 3.0]);
        let inv = pinv(&m);
        assert!(!inv.truncated);
        let id = &m * &inv.matrix;
        assert!(max_abs_diff(&id, &DMatrix::identity(2, 2)) < 1e-14);
    }

    #[test]
    fn pinv_of_rank_one() {
        // [1 1; 1 1]^# = [1 1; 1 1] / 4
        let m = DMatrix::from_element(2, 2, 1.0);
        let inv = pinv(&m);
        assert!(inv.truncated);
        assert!(max_abs_diff(&inv.matrix, &DMatrix::from_element(2, 2, 0.25)) < 1e-15);
    }

    #[test]
    fn pinv_of_zero_is_zero() {
        let inv = pinv(&DMatrix::zeros(2, 3));
        assert_eq!(inv.matrix.shape(), (3, 2));
        assert_eq!(inv.matrix.amax(), 0.0);
    }

    #[test]
    fn spd_inverse_falls_back_for_indefinite() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -2.0]);
        let inv = spd_inverse_or_pinv(&m);
        assert!(inv.truncated);
        assert!((inv.matrix[(1, 1)] + 0.5).abs() < 1e-15);
    }
}
