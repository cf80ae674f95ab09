//! Dense linear-algebra helpers over [`Scalar`].

use nalgebra::{Cholesky, DMatrix, DVector, Schur, SymmetricEigen};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub fn symmetrize<T: Scalar>(m: &DMatrix<T>) -> DMatrix<T> {
    (m + m.transpose()) * T::lit(0.5)
}

/// Induced infinity norm (max absolute row sum).
pub fn norm_inf<T: Scalar>(m: &DMatrix<T>) -> T {
    m.row_iter()
        .map(|r| r.iter().fold(T::zero(), |acc, v| acc + v.abs()))
        .fold(T::zero(), |a, b| a.max(b))
}

/// Induced 1-norm (max absolute column sum).
pub fn norm_1<T: Scalar>(m: &DMatrix<T>) -> T {
    m.column_iter()
        .map(|c| c.iter().fold(T::zero(), |acc, v| acc + v.abs()))
        .fold(T::zero(), |a, b| a.max(b))
}

/// Relative asymmetry `‖M − Mᵀ‖∞ / max(‖M‖∞, tiny)`.
pub fn asymmetry<T: Scalar>(m: &DMatrix<T>) -> T {
    let scale = norm_inf(m).max(T::min_value().unwrap_or_else(T::eps));
    norm_inf(&(m - m.transpose())) / scale
}

/// Eigenvalues of the symmetric part of `m`, ascending.
pub fn sym_eigenvalues<T: Scalar>(m: &DMatrix<T>) -> DVector<T> {
    let mut ev = SymmetricEigen::new(symmetrize(m)).eigenvalues;
    ev.as_mut_slice()
        .sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    ev
}

pub fn lambda_min<T: Scalar>(m: &DMatrix<T>) -> T {
    sym_eigenvalues(m).min()
}

pub fn lambda_max<T: Scalar>(m: &DMatrix<T>) -> T {
    sym_eigenvalues(m).max()
}

/// Largest real part over the (possibly complex) spectrum of a square matrix.
///
/// The QR iteration can stall on defective matrices (integrator chains, Bass
/// closed loops with one repeated eigenvalue). It is capped and retried on
/// slightly perturbed copies; eigenvalues of a Jordan block of size `k` are
/// only determined to about `eps^(1/k)` anyway. If every attempt fails,
/// `λ_max((M + Mᵀ)/2)` is returned, an upper bound on the spectral abscissa.
pub fn max_real_eigenvalue<T: Scalar>(m: &DMatrix<T>) -> T {
    let n = m.nrows();
    let scale = norm_inf(m).max(T::eps());
    let floor = T::min_value().map(|v| -v.abs()).unwrap_or(-T::one());
    for rel in [0.0, 1e-14, 1e-12, 1e-10] {
        let delta = T::lit(rel) * scale;
        let trial = DMatrix::from_fn(n, n, |i, j| m[(i, j)] + delta * T::lit(probe(i, j)));
        if let Some(schur) = Schur::try_new(trial, T::eps(), 1000 * n.max(1)) {
            return schur.complex_eigenvalues().iter().map(|c| c.re).fold(floor, |a, b| a.max(b));
        }
    }
    lambda_max(&symmetrize(m))
}

/// Fixed pattern in `[-0.5, 0.5)` without special structure.
fn probe(i: usize, j: usize) -> f64 {
    ((i * 31 + j * 17 + 7) as f64 * 0.618_033_988_749_895).fract() - 0.5
}

/// Hurwitz test that does not depend on eigenvalue accuracy: `A` is Hurwitz
/// iff `AᵀP + PA = −I` has a positive-definite solution.
pub fn is_hurwitz<T: Scalar>(a: &DMatrix<T>) -> bool {
    let n = a.nrows();
    solve_lyapunov(a, &DMatrix::identity(n, n)).is_ok_and(|p| all_finite(&p) && is_positive_definite(&p))
}

/// Inverse of a symmetric positive-definite matrix via Cholesky.
pub fn spd_inverse<T: Scalar>(m: &DMatrix<T>) -> Result<DMatrix<T>> {
    Cholesky::new(symmetrize(m))
        .map(|c| symmetrize(&c.inverse()))
        .ok_or_else(|| Error::Numerical("matrix is not positive definite".into()))
}

pub fn is_positive_definite<T: Scalar>(m: &DMatrix<T>) -> bool {
    Cholesky::new(symmetrize(m)).is_some()
}

/// Solves the continuous Lyapunov equation `AᵀP + PA = −W` for `P`.
///
/// Uses the Kronecker-sum linear system, which is dense of size n²; intended
/// for the state dimensions this toolkit targets (n ≲ 20).
pub fn solve_lyapunov<T: Scalar>(a: &DMatrix<T>, w: &DMatrix<T>) -> Result<DMatrix<T>> {
    let n = a.nrows();
    if a.ncols() != n || w.nrows() != n || w.ncols() != n {
        return Err(Error::Numerical("lyapunov: shape mismatch".into()));
    }
    let eye = DMatrix::<T>::identity(n, n);
    let at = a.transpose();
    let k = eye.kronecker(&at) + at.kronecker(&eye);
    let rhs = DVector::from_iterator(n * n, w.iter().map(|v| -*v));
    let sol = k
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Numerical("lyapunov: singular Kronecker system (A has eigenvalue pair summing to zero)".into()))?;
    Ok(symmetrize(&DMatrix::from_column_slice(n, n, sol.as_slice())))
}

pub fn all_finite<T: Scalar>(m: &DMatrix<T>) -> bool {
    m.iter().all(|v| v.is_finite())
}

/// Square-root factor `L` with `M = L Lᵀ`.
pub fn cholesky_factor<T: Scalar>(m: &DMatrix<T>) -> Result<DMatrix<T>> {
    Cholesky::new(symmetrize(m))
        .map(|c| c.unpack())
        .ok_or_else(|| Error::Numerical("matrix is not positive definite".into()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lyapunov_identity_case() {
        let a = -DMatrix::<f64>::identity(2, 2);
        let w = DMatrix::<f64>::identity(2, 2) * 2.0;
        let p = solve_lyapunov(&a, &w).unwrap();
        assert!((p - DMatrix::identity(2, 2)).norm() < 1e-14);
    }

    #[test]
    fn lyapunov_residual_nonsymmetric() {
        let a = DMatrix::from_row_slice(3, 3, &[0.0, 1.0, 0.0, 0.0, 0.0, 1.0, -1.0, -3.0, -3.0]);
        let w = DMatrix::identity(3, 3);
        let p = solve_lyapunov(&a, &w).unwrap();
        let res = a.transpose() * &p + &p * &a + &w;
        assert!(res.norm() < 1e-12);
        assert!(is_positive_definite(&p));
    }

    #[test]
    fn max_real_part_of_rotation() {
        let a = DMatrix::<f64>::from_row_slice(2, 2, &[-0.5, 1.0, -1.0, -0.5]);
        assert!((max_real_eigenvalue(&a) + 0.5).abs() < 1e-12);
    }

    #[test]
    fn norms() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, -2.0, 3.0, 4.0]);
        assert_eq!(norm_1(&m), 6.0);
        assert_eq!(norm_inf(&m), 7.0);
    }

    #[test]
    fn works_in_single_precision() {
        let a = -DMatrix::<f32>::identity(2, 2);
        let p = solve_lyapunov(&a, &(DMatrix::identity(2, 2) * 2.0f32)).unwrap();
        assert!((p[(0, 0)] - 1.0).abs() < 1e-6);
    }
}
