#![allow(dead_code)]

use std::path::PathBuf;

use nalgebra::{DMatrix, DVector};
use rejuv::expm::expm;
use rejuv::scenario::Scenario;

pub fn scenario_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name)
}

pub fn scenario(name: &str) -> Scenario {
    Scenario::load(&scenario_path(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

/// Exact zero-order-hold pair `(A_d, B_d)` from one exponential of the
/// block matrix `[[A, B], [0, 0]] dt`.
pub fn zoh(a: &DMatrix<f64>, b: &DMatrix<f64>, dt: f64) -> (DMatrix<f64>, DMatrix<f64>) {
    let (n, m) = (a.nrows(), b.ncols());
    let mut big = DMatrix::zeros(n + m, n + m);
    big.view_mut((0, 0), (n, n)).copy_from(&(a * dt));
    big.view_mut((0, n), (n, m)).copy_from(&(b * dt));
    let e = expm(&big);
    (e.view((0, 0), (n, n)).into_owned(), e.view((0, n), (n, m)).into_owned())
}

pub fn quad(p: &DMatrix<f64>, x: &DVector<f64>) -> f64 {
    (x.transpose() * p * x)[(0, 0)]
}

/// Truncated Taylor series, summed until the terms stop contributing.
pub fn expm_series(m: &DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows();
    let mut sum = DMatrix::identity(n, n);
    let mut term = DMatrix::identity(n, n);
    for k in 1..60 {
        term = &term * m / k as f64;
        sum += &term;
        if term.abs().max() < 1e-20 {
            break;
        }
    }
    sum
}

fn shape(theta: f64, log_ratio: f64) -> DMatrix<f64> {
    let (s, c) = theta.sin_cos();
    let r = DMatrix::from_row_slice(2, 2, &[c, -s, s, c]);
    let d = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, log_ratio.exp()]));
    &r * d * r.transpose()
}

/// Largest log det of a scaled shape that keeps `AQ + QAᵀ ⪯ 0` and
/// `ξᵀQξ ≤ 1`; `None` when the shape violates the cone.
fn scaled_log_det(a: &DMatrix<f64>, xis: &[DVector<f64>], theta: f64, log_ratio: f64) -> Option<f64> {
    let q = shape(theta, log_ratio);
    let lmi = a * &q + &q * a.transpose();
    let lmi = (&lmi + lmi.transpose()) * 0.5;
    let top = lmi.symmetric_eigenvalues().max();
    if top > 1e-12 * lmi.norm() {
        return None;
    }
    let worst = xis.iter().map(|xi| quad(&q, xi)).fold(0.0, f64::max);
    Some(log_ratio - 2.0 * worst.ln())
}

/// Brute-force det-max for 2-D instances. The LMI is homogeneous in `Q`, so
/// only the shape (angle, axis ratio) is searched; the scale is then fixed
/// by the tightest constraint. A coarse grid is refined by repeated zooms.
pub fn brute_force_log_det(a: &DMatrix<f64>, xis: &[DVector<f64>]) -> f64 {
    let pi = std::f64::consts::PI;
    let (mut t_lo, mut t_hi) = (0.0, pi);
    let (mut r_lo, mut r_hi) = (-12.0, 12.0);
    let mut best = f64::NEG_INFINITY;
    let mut arg = (0.0, 0.0);
    for _ in 0..12 {
        let k = 200;
        for i in 0..=k {
            let th = t_lo + (t_hi - t_lo) * i as f64 / k as f64;
            for j in 0..=k {
                let lr = r_lo + (r_hi - r_lo) * j as f64 / k as f64;
                if let Some(v) = scaled_log_det(a, xis, th, lr) {
                    if v > best {
                        best = v;
                        arg = (th, lr);
                    }
                }
            }
        }
        let (dt, dr) = ((t_hi - t_lo) / 10.0, (r_hi - r_lo) / 10.0);
        (t_lo, t_hi, r_lo, r_hi) = (arg.0 - dt, arg.0 + dt, arg.1 - dr, arg.1 + dr);
    }
    best
}

/// Five stable 2-D loops with polyhedral regions.
pub fn det_max_instances() -> Vec<(DMatrix<f64>, Vec<DVector<f64>>)> {
    let v = |a: f64, b: f64| DVector::from_vec(vec![a, b]);
    let sym = |xs: Vec<DVector<f64>>| xs.iter().flat_map(|x| [x.clone(), -x]).collect::<Vec<_>>();
    vec![
        (DMatrix::from_row_slice(2, 2, &[-1.0, 0.0, 0.0, -2.0]), sym(vec![v(1.0, 0.0), v(0.0, 0.5)])),
        (DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -2.0, -3.0]), sym(vec![v(1.0, 0.0), v(0.0, 1.0)])),
        (DMatrix::from_row_slice(2, 2, &[-0.5, 2.0, -2.0, -0.5]), sym(vec![v(1.0, 0.0), v(0.0, 1.0), v(0.7, 0.7)])),
        (DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, -0.4]), sym(vec![v(2.0, 0.0), v(0.0, 0.5)])),
        (DMatrix::from_row_slice(2, 2, &[-1.0, 3.0, 0.0, -1.5]), vec![v(1.0, 0.0), v(-0.5, 0.0), v(0.0, 1.0), v(0.0, -1.0), v(1.0, 1.0)]),
        (DMatrix::from_row_slice(2, 2, &[-0.2, 1.0, -1.0, -0.2]), sym(vec![v(1.0, 0.2), v(-0.3, 1.0)])),
    ]
}
