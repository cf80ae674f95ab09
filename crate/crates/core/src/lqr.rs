//! Continuous-time LQR gains by Newton–Kleinman iteration, started from a
//! Bass stabilizing gain so no initial guess is required.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{dimension, domain, Error, Result};
use crate::linalg::{is_hurwitz, lambda_max, max_real_eigenvalue, norm_inf, solve_lyapunov, spd_inverse, symmetrize};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LqrSolution<T: Scalar> {
    pub k: DMatrix<T>,
    /// Stabilizing solution of the algebraic Riccati equation.
    pub p: DMatrix<T>,
    pub iterations: usize,
}

/// Gain `K = BᵀX⁻¹` with `(A+βI)X + X(A+βI)ᵀ = 2BBᵀ`; `A − BK` has every
/// eigenvalue at or left of `−β` for a controllable pair.
pub fn bass_stabilizing_gain<T: Scalar>(a: &DMatrix<T>, b: &DMatrix<T>, beta: Option<T>) -> Result<DMatrix<T>> {
    check(a, b)?;
    let n = a.nrows();
    let beta = beta.unwrap_or_else(|| lambda_max(&symmetrize(a)).max(T::zero()) + T::one());
    let shifted = -(a + DMatrix::identity(n, n) * beta).transpose();
    let x = solve_lyapunov(&shifted, &(b * b.transpose() * T::lit(2.0)))?;
    let x_inv = spd_inverse(&x).map_err(|_| domain("lqr", "(A, B) is not controllable"))?;
    Ok(b.transpose() * x_inv)
}

/// Newton–Kleinman iteration for `AᵀP + PA − PBR⁻¹BᵀP + Q = 0`.
pub fn newton_kleinman<T: Scalar>(
    a: &DMatrix<T>,
    b: &DMatrix<T>,
    q: &DMatrix<T>,
    r: &DMatrix<T>,
    k0: DMatrix<T>,
    max_iter: usize,
) -> Result<LqrSolution<T>> {
    check(a, b)?;
    let r_inv = spd_inverse(r).map_err(|_| domain("lqr", "R must be positive definite"))?;
    let mut k = k0;
    let mut prev: Option<DMatrix<T>> = None;
    for it in 1..=max_iter {
        let acl = a - b * &k;
        if !is_hurwitz(&acl) {
            return Err(Error::NotHurwitz { max_real_part: max_real_eigenvalue(&acl).as_f64() });
        }
        let w = symmetrize(&(q + k.transpose() * r * &k));
        let p = solve_lyapunov(&acl, &w)?;
        k = &r_inv * b.transpose() * &p;
        if let Some(pp) = &prev {
            if norm_inf(&(&p - pp)) <= T::lit(1e-12).max(T::eps() * T::lit(100.0)) * norm_inf(&p) {
                return Ok(LqrSolution { k, p, iterations: it });
            }
        }
        prev = Some(p);
    }
    Err(Error::Numerical(format!("Newton–Kleinman did not converge in {max_iter} iterations")))
}

/// LQR gain for weights `Q ⪰ 0`, `R ≻ 0`.
pub fn lqr<T: Scalar>(a: &DMatrix<T>, b: &DMatrix<T>, q: &DMatrix<T>, r: &DMatrix<T>) -> Result<LqrSolution<T>> {
    let k0 = bass_stabilizing_gain(a, b, None)?;
    newton_kleinman(a, b, q, r, k0, 100)
}

fn check<T: Scalar>(a: &DMatrix<T>, b: &DMatrix<T>) -> Result<()> {
    if !a.is_square() || b.nrows() != a.nrows() {
        return Err(dimension("lqr", "A must be square with as many rows as B"));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scalar_integrator_closed_form() {
        // ẋ = u, q = 4, r = 1 → P = 2, K = 2.
        let a = DMatrix::<f64>::zeros(1, 1);
        let b = DMatrix::from_element(1, 1, 1.0);
        let sol = lqr(&a, &b, &DMatrix::from_element(1, 1, 4.0), &DMatrix::from_element(1, 1, 1.0)).unwrap();
        assert!((sol.k[(0, 0)] - 2.0).abs() < 1e-10);
        assert!((sol.p[(0, 0)] - 2.0).abs() < 1e-10);
    }

    #[test]
    fn double_integrator_riccati_residual() {
        let a = DMatrix::<f64>::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
        let b = DMatrix::from_column_slice(2, 1, &[0.0, 1.0]);
        let q = DMatrix::identity(2, 2);
        let r = DMatrix::from_element(1, 1, 1.0);
        let sol = lqr(&a, &b, &q, &r).unwrap();
        let res = a.transpose() * &sol.p + &sol.p * &a - &sol.p * &b * b.transpose() * &sol.p + &q;
        assert!(res.amax() < 1e-10);
        // Known optimum K = [1, √3].
        assert!((sol.k[(0, 1)] - 3f64.sqrt()).abs() < 1e-9);
    }

    #[test]
    fn bass_gain_stabilizes() {
        let a = DMatrix::<f64>::from_row_slice(3, 3, &[0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0]);
        let b = DMatrix::from_column_slice(3, 1, &[0.0, 0.0, 1.0]);
        let k = bass_stabilizing_gain(&a, &b, Some(0.5)).unwrap();
        assert!(max_real_eigenvalue(&(&a - &b * k)) <= -0.5 + 1e-6);
    }

    #[test]
    fn uncontrollable_pair_fails() {
        let a = DMatrix::<f64>::identity(2, 2);
        let b = DMatrix::from_column_slice(2, 1, &[1.0, 0.0]);
        assert!(bass_stabilizing_gain(&a, &b, None).is_err());
    }
}
