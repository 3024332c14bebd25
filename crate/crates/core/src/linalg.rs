//! Small dense linear algebra used to build quadratic Lyapunov data.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("matrix is not Hurwitz: eigenvalue with real part {0}")]
    NotHurwitz(f64),
    #[error("matrix must be square, got {0}x{1}")]
    NotSquare(usize, usize),
    #[error("Lyapunov system is singular")]
    Singular,
    #[error("matrix is not positive definite (smallest eigenvalue {0})")]
    NotPositiveDefinite(f64),
}

/// Largest real part among the eigenvalues of `a`.
pub fn spectral_abscissa(a: &DMatrix<f64>) -> f64 {
    a.complex_eigenvalues()
        .iter()
        .map(|z| z.re)
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Solves `P·A + Aᵀ·P = −Q` for `P`, requiring `A` Hurwitz.
///
/// The equation is vectorised as `(I ⊗ Aᵀ + Aᵀ ⊗ I)·vec(P) = −vec(Q)` and
/// solved by LU; for the state dimensions involved here this is cheaper
/// than a Bartels–Stewart solve.
pub fn solve_lyapunov(a: &DMatrix<f64>, q: &DMatrix<f64>) -> Result<DMatrix<f64>, LinalgError> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(LinalgError::NotSquare(n, a.ncols()));
    }
    let abscissa = spectral_abscissa(a);
    if !(abscissa < 0.0) {
        return Err(LinalgError::NotHurwitz(abscissa));
    }
    let at = a.transpose();
    let eye = DMatrix::<f64>::identity(n, n);
    let system = eye.kronecker(&at) + at.kronecker(&eye);
    let rhs = -DVector::from_column_slice(q.as_slice());
    let vec_p = system.lu().solve(&rhs).ok_or(LinalgError::Singular)?;
    let p = DMatrix::from_column_slice(n, n, vec_p.as_slice());
    // symmetrise away round-off
    Ok((&p + p.transpose()) * 0.5)
}

/// Eigenvalues of a symmetric matrix in ascending order.
pub fn symmetric_eigenvalues(p: &DMatrix<f64>) -> Vec<f64> {
    let mut ev: Vec<f64> = SymmetricEigen::new(p.clone()).eigenvalues.iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    ev
}

/// Principal square root of a symmetric positive definite matrix.
pub fn sym_sqrt(p: &DMatrix<f64>) -> Result<DMatrix<f64>, LinalgError> {
    let eig = SymmetricEigen::new(p.clone());
    let min = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    if !(min > 0.0) {
        return Err(LinalgError::NotPositiveDefinite(min));
    }
    let root = DMatrix::from_diagonal(&eig.eigenvalues.map(f64::sqrt));
    Ok(&eig.eigenvectors * root * eig.eigenvectors.transpose())
}

/// Induced 2-norm (largest singular value).
pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    m.singular_values().iter().copied().fold(0.0, f64::max)
}

/// Frobenius norm of `P·A + Aᵀ·P + Q`.
pub fn lyapunov_residual(p: &DMatrix<f64>, a: &DMatrix<f64>, q: &DMatrix<f64>) -> f64 {
    (p * a + a.transpose() * p + q).norm()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scalar_lyapunov() {
        // 2·a·p = −1 with a = −2  ⇒  p = 1/4
        let a = DMatrix::from_element(1, 1, -2.0);
        let q = DMatrix::identity(1, 1);
        let p = solve_lyapunov(&a, &q).unwrap();
        assert!((p[(0, 0)] - 0.25).abs() < 1e-15);
    }

    #[test]
    fn rejects_unstable() {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        assert!(matches!(
            solve_lyapunov(&a, &DMatrix::identity(2, 2)),
            Err(LinalgError::NotHurwitz(_))
        ));
    }

    #[test]
    fn sqrt_reconstructs() {
        let p = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let r = sym_sqrt(&p).unwrap();
        assert!((&r * &r - &p).norm() < 1e-12);
        assert!(sym_sqrt(&DMatrix::from_row_slice(1, 1, &[-1.0])).is_err());
    }

    #[test]
    fn residual_of_random_stable_system() {
        let a = DMatrix::from_row_slice(3, 3, &[-1.0, 2.0, 0.0, 0.0, -3.0, 1.0, 0.5, 0.0, -2.0]);
        let q = DMatrix::identity(3, 3);
        let p = solve_lyapunov(&a, &q).unwrap();
        assert!(lyapunov_residual(&p, &a, &q) < 1e-12);
        assert!(symmetric_eigenvalues(&p)[0] > 0.0);
    }
}
