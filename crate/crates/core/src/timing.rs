//! Lyapunov decay rate of the safety loop, the worst-case time it needs to
//! reach the inner safe set, and the sublevel-set predicates.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{dimension, domain, Error, Result};
use crate::linalg::{cholesky_factor, lambda_min, norm_inf, symmetrize};
use crate::scalar::Scalar;

/// Safety feedback together with its certified timing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SafetyController<T: Scalar> {
    pub k: DMatrix<T>,
    pub a_sc: DMatrix<T>,
    pub p: DMatrix<T>,
    /// Guaranteed exponential contraction rate of `V(x) = xᵀPx`, 1/s.
    pub gamma: T,
    pub epsilon: T,
    /// `−ln(ε)/γ`, s.
    pub t_sc_bound: T,
}

impl<T: Scalar> SafetyController<T> {
    pub fn new(k: DMatrix<T>, a_sc: DMatrix<T>, p: DMatrix<T>, epsilon: T) -> Result<Self> {
        let gamma = decay_rate(&a_sc, &p)?;
        let t_sc_bound = safety_time_bound(gamma, epsilon)?;
        Ok(Self { k, a_sc, p, gamma, epsilon, t_sc_bound })
    }
}

/// `W = −(A_SCᵀP + PA_SC)`.
pub fn dissipation<T: Scalar>(a_sc: &DMatrix<T>, p: &DMatrix<T>) -> DMatrix<T> {
    let pa = p * a_sc;
    symmetrize(&-(&pa + pa.transpose()))
}

/// `γ = λ_min(W P⁻¹)`, evaluated as `λ_min(L⁻¹ W L⁻ᵀ)` with `P = LLᵀ`.
pub fn decay_rate<T: Scalar>(a_sc: &DMatrix<T>, p: &DMatrix<T>) -> Result<T> {
    if !a_sc.is_square() || p.shape() != a_sc.shape() {
        return Err(dimension("timing", "A_SC and P must be square of equal size"));
    }
    let w = dissipation(a_sc, p);
    let w_min = lambda_min(&w);
    if w_min < -T::lit(1e-9) * norm_inf(&w) {
        return Err(Error::NotCertificate { min_eig: w_min.as_f64() });
    }
    let l = cholesky_factor(p).map_err(|_| domain("timing", "P must be positive definite"))?;
    let li_w = l
        .solve_lower_triangular(&w)
        .ok_or_else(|| Error::Numerical("singular Cholesky factor".into()))?;
    let m = l
        .solve_lower_triangular(&li_w.transpose())
        .ok_or_else(|| Error::Numerical("singular Cholesky factor".into()))?;
    let gamma = lambda_min(&m);
    if !(gamma > T::zero()) {
        return Err(Error::NotCertificate { min_eig: gamma.as_f64() });
    }
    Ok(gamma)
}

/// `T̄_SC = −ln(ε)/γ`.
pub fn safety_time_bound<T: Scalar>(gamma: T, epsilon: T) -> Result<T> {
    if !(gamma > T::zero()) || !gamma.is_finite() {
        return Err(domain("timing", format!("decay rate must be positive, got {:e}", gamma.as_f64())));
    }
    if !(epsilon > T::zero() && epsilon <= T::one()) {
        return Err(domain("timing", format!("epsilon must lie in (0, 1], got {}", epsilon.as_f64())));
    }
    Ok(-epsilon.ln() / gamma)
}

/// `V(x) = xᵀPx`.
pub fn lyapunov_value<T: Scalar>(p: &DMatrix<T>, x: &DVector<T>) -> T {
    x.dot(&(p * x))
}

pub fn in_safe_set<T: Scalar>(p: &DMatrix<T>, x: &DVector<T>) -> bool {
    lyapunov_value(p, x) <= T::one()
}

pub fn in_inner_set<T: Scalar>(p: &DMatrix<T>, x: &DVector<T>, epsilon: T) -> bool {
    lyapunov_value(p, x) <= epsilon
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_rate() {
        let eye = DMatrix::<f64>::identity(2, 2);
        assert!((decay_rate(&-eye.clone(), &eye).unwrap() - 2.0).abs() < 1e-14);
    }

    #[test]
    fn slowest_mode_dominates() {
        let a = DMatrix::from_diagonal(&DVector::from_vec(vec![-1.0, -3.0]));
        let eye = DMatrix::<f64>::identity(2, 2);
        assert!((decay_rate(&a, &eye).unwrap() - 2.0).abs() < 1e-14);
    }

    #[test]
    fn rejects_non_certificate() {
        let eye = DMatrix::<f64>::identity(2, 2);
        assert!(matches!(decay_rate(&eye, &eye), Err(Error::NotCertificate { .. })));
    }

    #[test]
    fn scale_invariance() {
        let a = DMatrix::<f64>::from_row_slice(2, 2, &[0.0, 1.0, -1.0, -2.0]);
        let p = crate::linalg::solve_lyapunov(&a, &DMatrix::identity(2, 2)).unwrap();
        let g1 = decay_rate(&a, &p).unwrap();
        let g2 = decay_rate(&a, &(p * 37.5)).unwrap();
        assert!(((g1 - g2) / g1).abs() < 1e-9);
    }

    #[test]
    fn time_bound_values() {
        assert!((safety_time_bound(2.0, 0.01).unwrap() - 100f64.ln() / 2.0).abs() < 1e-15);
        assert_eq!(safety_time_bound(1.0, 1.0).unwrap(), 0.0);
        assert!(safety_time_bound(0.0, 0.5).is_err());
        assert!(safety_time_bound(1.0, 0.0).is_err());
        assert!(safety_time_bound(1.0, 1.5).is_err());
    }

    #[test]
    fn value_and_predicates() {
        let eye = DMatrix::<f64>::identity(2, 2);
        let origin = DVector::zeros(2);
        assert_eq!(lyapunov_value(&eye, &origin), 0.0);
        assert!(in_safe_set(&eye, &origin) && in_inner_set(&eye, &origin, 0.01));
        let e1 = DVector::from_vec(vec![1.0, 0.0]);
        assert_eq!(lyapunov_value(&eye, &e1), 1.0);
        assert!(in_safe_set(&eye, &e1));
        assert!(!in_inner_set(&eye, &e1, 0.01));
        let p = DMatrix::from_diagonal(&DVector::from_vec(vec![4.0, 1.0]));
        assert_eq!(lyapunov_value(&p, &DVector::from_vec(vec![0.5, 0.0])), 1.0);
    }
}
