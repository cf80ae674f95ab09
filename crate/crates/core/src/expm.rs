//! Matrix exponential by scaling and squaring with diagonal Padé
//! approximants of degree 3, 5, 7, 9 and 13.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg::norm_1;
use crate::scalar::Scalar;

/// Largest accepted `‖M t‖₁` before [`Error::Overflow`] is reported.
pub const DEFAULT_NORM_CAP: f64 = 50.0;

const THETA: [(usize, f64); 4] = [
    (3, 1.495585217958292e-2),
    (5, 2.539398330063230e-1),
    (7, 9.504178996162932e-1),
    (9, 2.097847961257068e0),
];
const THETA_13: f64 = 5.371920351148152e0;

const B3: [f64; 4] = [120., 60., 12., 1.];
const B5: [f64; 6] = [30240., 15120., 3360., 420., 30., 1.];
const B7: [f64; 8] = [17297280., 8648640., 1995840., 277200., 25200., 1512., 56., 1.];
const B9: [f64; 10] = [
    17643225600., 8821612800., 2075673600., 302702400., 30270240., 2162160., 110880., 3960., 90., 1.,
];
const B13: [f64; 14] = [
    64764752532480000.,
    32382376266240000.,
    7771770303897600.,
    1187353796428800.,
    129060195264000.,
    10559470521600.,
    670442572800.,
    33522128640.,
    1323241920.,
    40840800.,
    960960.,
    16380.,
    182.,
    1.,
];

/// `e^{M t}` with the default norm cap.
pub fn matrix_exponential<T: Scalar>(m: &DMatrix<T>, t: T) -> Result<DMatrix<T>> {
    expm_capped(&(m * t), T::lit(DEFAULT_NORM_CAP))
}

/// `e^{M}` refusing arguments whose 1-norm exceeds `cap`.
pub fn expm_capped<T: Scalar>(m: &DMatrix<T>, cap: T) -> Result<DMatrix<T>> {
    if !m.is_square() {
        return Err(crate::error::dimension("expm", "matrix must be square"));
    }
    if !crate::linalg::all_finite(m) {
        return Err(Error::Numerical("expm: non-finite input".into()));
    }
    let norm = norm_1(m);
    if norm > cap {
        return Err(Error::Overflow { norm: norm.as_f64(), cap: cap.as_f64() });
    }
    Ok(expm(m))
}

/// Uncapped `e^{M}`.
pub fn expm<T: Scalar>(m: &DMatrix<T>) -> DMatrix<T> {
    let n = m.nrows();
    if n == 0 {
        return DMatrix::zeros(0, 0);
    }
    let norm = norm_1(m);
    for (deg, theta) in THETA {
        if norm <= T::lit(theta) {
            let coeffs: &[f64] = match deg {
                3 => &B3,
                5 => &B5,
                7 => &B7,
                _ => &B9,
            };
            return pade_low(m, coeffs);
        }
    }
    let ratio = (norm / T::lit(THETA_13)).as_f64();
    let s = ratio.log2().ceil().max(0.0) as i32;
    let scaled = m * T::lit(2f64.powi(-s));
    let mut e = pade13(&scaled);
    for _ in 0..s {
        e = &e * &e;
    }
    e
}

fn pade_low<T: Scalar>(a: &DMatrix<T>, b: &[f64]) -> DMatrix<T> {
    let n = a.nrows();
    let eye = DMatrix::<T>::identity(n, n);
    let a2 = a * a;
    let mut u_inner = &eye * T::lit(b[1]);
    let mut v = &eye * T::lit(b[0]);
    let mut pow = eye.clone();
    for k in 1..b.len() / 2 {
        pow = &pow * &a2;
        u_inner += &pow * T::lit(b[2 * k + 1]);
        v += &pow * T::lit(b[2 * k]);
    }
    let u = a * u_inner;
    solve_pade(&u, &v)
}

fn pade13<T: Scalar>(a: &DMatrix<T>) -> DMatrix<T> {
    let n = a.nrows();
    let b = |i: usize| T::lit(B13[i]);
    let eye = DMatrix::<T>::identity(n, n);
    let a2 = a * a;
    let a4 = &a2 * &a2;
    let a6 = &a4 * &a2;
    let u_hi = &a6 * (&a6 * b(13) + &a4 * b(11) + &a2 * b(9));
    let u = a * (u_hi + &a6 * b(7) + &a4 * b(5) + &a2 * b(3) + &eye * b(1));
    let v_hi = &a6 * (&a6 * b(12) + &a4 * b(10) + &a2 * b(8));
    let v = v_hi + &a6 * b(6) + &a4 * b(4) + &a2 * b(2) + &eye * b(0);
    solve_pade(&u, &v)
}

fn solve_pade<T: Scalar>(u: &DMatrix<T>, v: &DMatrix<T>) -> DMatrix<T> {
    let q = v - u;
    let p = v + u;
    // Q is well conditioned for the degree/threshold pairs above.
    q.lu().solve(&p).expect("Padé denominator is singular")
}
