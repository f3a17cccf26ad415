//! Ridge-regularised linear least squares via Householder QR.

use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::matrix::Matrix;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LinalgError {
    #[error("least-squares system is singular or rank deficient")]
    SingularSystem,
    #[error("design has {rows} rows but {targets} targets were given")]
    DimensionMismatch { rows: usize, targets: usize },
    #[error("ridge penalty must be finite and non-negative")]
    InvalidPenalty,
}

/// Relative pivot size below which the triangular factor counts as singular.
const RANK_TOL: f64 = 1e-12;

/// Minimises `‖Aθ − y‖² + λ‖θ‖²` by factorising the stacked system
/// `[A; √λ I]` rather than forming the normal equations.
pub fn ridge_lstsq(design: &Matrix, targets: &[f64], lambda: f64) -> Result<Vec<f64>, LinalgError> {
    let (rows, cols) = (design.rows(), design.cols());
    if rows != targets.len() {
        return Err(LinalgError::DimensionMismatch {
            rows,
            targets: targets.len(),
        });
    }
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(LinalgError::InvalidPenalty);
    }
    let extra = if lambda > 0.0 { cols } else { 0 };
    let total = rows + extra;
    if total < cols || cols == 0 {
        return Err(LinalgError::SingularSystem);
    }
    let root = libm::sqrt(lambda);
    let a = DMatrix::from_fn(total, cols, |r, c| {
        if r < rows {
            design[(r, c)]
        } else if r - rows == c {
            root
        } else {
            0.0
        }
    });
    let mut b = DVector::from_fn(total, |r, _| if r < rows { targets[r] } else { 0.0 });

    let qr = a.qr();
    qr.q_tr_mul(&mut b);
    let r = qr.r();
    let diag_max = (0..cols).map(|i| r[(i, i)].abs()).fold(0.0, f64::max);
    if !(diag_max > 0.0) || (0..cols).any(|i| r[(i, i)].abs() <= RANK_TOL * diag_max) {
        return Err(LinalgError::SingularSystem);
    }
    let upper = r.view((0, 0), (cols, cols)).into_owned();
    let rhs = b.rows(0, cols).into_owned();
    let solution = upper
        .solve_upper_triangular(&rhs)
        .ok_or(LinalgError::SingularSystem)?;
    if solution.iter().any(|v| !v.is_finite()) {
        return Err(LinalgError::SingularSystem);
    }
    Ok(solution.iter().copied().collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use approx::assert_abs_diff_eq;

    /// Normal equations solved by Gauss–Jordan elimination with partial
    /// pivoting; independent of the QR path.
    fn normal_equations(a: &Matrix, y: &[f64], lambda: f64) -> Vec<f64> {
        let n = a.cols();
        let mut m = a.tr_matmul(a);
        for i in 0..n {
            m[(i, i)] += lambda;
        }
        let mut rhs = a.vec_matmul(y);
        for col in 0..n {
            let pivot = (col..n).max_by(|&i, &j| m[(i, col)].abs().total_cmp(&m[(j, col)].abs())).unwrap();
            for k in 0..n {
                let tmp = m[(col, k)];
                m[(col, k)] = m[(pivot, k)];
                m[(pivot, k)] = tmp;
            }
            rhs.swap(col, pivot);
            for i in 0..n {
                if i != col {
                    let f = m[(i, col)] / m[(col, col)];
                    for k in 0..n {
                        m[(i, k)] -= f * m[(col, k)];
                    }
                    rhs[i] -= f * rhs[col];
                }
            }
        }
        (0..n).map(|i| rhs[i] / m[(i, i)]).collect()
    }

    #[test]
    fn matches_normal_equations() {
        let a = Matrix::from_fn(30, 4, |r, c| libm::sin(0.7 * (r * (c + 1)) as f64) + if c == 3 { 1.0 } else { 0.0 });
        let y: Vec<f64> = (0..30).map(|r| libm::cos(r as f64)).collect();
        for lambda in [0.0, 0.1, 10.0] {
            let qr = ridge_lstsq(&a, &y, lambda).unwrap();
            let ne = normal_equations(&a, &y, lambda);
            for (p, q) in qr.iter().zip(&ne) {
                assert_abs_diff_eq!(p, q, epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn rank_deficiency_is_reported_only_without_ridge() {
        let a = Matrix::from_fn(10, 2, |r, _| r as f64);
        let y = vec![1.0; 10];
        assert_eq!(ridge_lstsq(&a, &y, 0.0), Err(LinalgError::SingularSystem));
        assert!(ridge_lstsq(&a, &y, 1e-3).is_ok());
        let wide = Matrix::zeros(1, 3);
        assert_eq!(ridge_lstsq(&wide, &[1.0], 0.0), Err(LinalgError::SingularSystem));
    }

    #[test]
    fn input_errors() {
        let a = Matrix::zeros(3, 1);
        assert!(matches!(ridge_lstsq(&a, &[1.0], 0.0), Err(LinalgError::DimensionMismatch { .. })));
        assert_eq!(ridge_lstsq(&a, &[1.0; 3], -1.0), Err(LinalgError::InvalidPenalty));
    }
}
