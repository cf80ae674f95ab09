//! Maximal-volume positively invariant ellipsoids inside a polyhedral safe
//! region, for a stable closed loop `ẋ = A_SC x`.
//!
//! The safe ellipsoid is `E_C = {x : xᵀPx ≤ 1}` with `P = Q⁻¹`, where `Q`
//! maximizes `log det Q` subject to
//!
//! * `QA_SCᵀ + A_SC Q ⪯ 0` (invariance of every sublevel set),
//! * `ξ_jᵀ Q ξ_j ≤ 1` for every face `ξ_jᵀx ≤ 1` of the region,
//! * `Q ≻ 0`.
//!
//! The optimum is computed with a log-barrier Newton method started from a
//! scaled Lyapunov ellipsoid, which is always strictly feasible.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{dimension, domain, Error, Result};
use crate::linalg::{
    all_finite, asymmetry, is_positive_definite, lambda_max, lambda_min, max_real_eigenvalue,
    norm_inf, solve_lyapunov, spd_inverse, symmetrize,
};
use crate::scalar::Scalar;

/// Eigenvalues with real part at or above this are treated as unstable.
pub const HURWITZ_MARGIN: f64 = -1e-9;
/// Relative symmetry tolerance for shape matrices.
pub const SYMMETRY_TOL: f64 = 1e-9;
/// `‖PQ − I‖∞` tolerance.
pub const INVERSE_TOL: f64 = 1e-7;
/// Invariance LMI slack, relative to `‖Q‖∞`.
pub const LMI_TOL: f64 = 1e-8;
/// Face containment slack.
pub const CONTAINMENT_TOL: f64 = 1e-8;

/// Linearized plant `ẋ = A x + B u` around an equilibrium `(x_e, u_e)`.
/// States and inputs handed to the kernels are deviations from it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearPlant<T: Scalar> {
    pub a: DMatrix<T>,
    pub b: DMatrix<T>,
    pub x_e: DVector<T>,
    pub u_e: DVector<T>,
}

impl<T: Scalar> LinearPlant<T> {
    pub fn new(a: DMatrix<T>, b: DMatrix<T>) -> Result<Self> {
        let (n, m) = (a.nrows(), b.ncols());
        Self::with_equilibrium(a, b, DVector::zeros(n), DVector::zeros(m))
    }

    pub fn with_equilibrium(
        a: DMatrix<T>,
        b: DMatrix<T>,
        x_e: DVector<T>,
        u_e: DVector<T>,
    ) -> Result<Self> {
        if !a.is_square() {
            return Err(dimension("ellipsoid", "A must be square"));
        }
        let n = a.nrows();
        if b.nrows() != n || x_e.len() != n || u_e.len() != b.ncols() {
            return Err(dimension(
                "ellipsoid",
                format!(
                    "A is {n}x{n}, B is {}x{}, x_e has {}, u_e has {}",
                    b.nrows(),
                    b.ncols(),
                    x_e.len(),
                    u_e.len()
                ),
            ));
        }
        if !all_finite(&a) || !all_finite(&b) || x_e.iter().chain(u_e.iter()).any(|v| !v.is_finite()) {
            return Err(domain("ellipsoid", "plant entries must be finite"));
        }
        Ok(Self { a, b, x_e, u_e })
    }

    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    pub fn m(&self) -> usize {
        self.b.ncols()
    }
}

/// Polyhedron `{x : ξ_jᵀx ≤ 1}` given by its normalized face normals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolyhedralConstraints<T: Scalar> {
    normals: Vec<DVector<T>>,
}

impl<T: Scalar> PolyhedralConstraints<T> {
    pub fn new(normals: Vec<DVector<T>>) -> Result<Self> {
        let Some(first) = normals.first() else {
            return Err(domain("ellipsoid", "constraint set is empty"));
        };
        let n = first.len();
        for (j, xi) in normals.iter().enumerate() {
            if xi.len() != n {
                return Err(dimension("ellipsoid", format!("normal {j} has length {}, expected {n}", xi.len())));
            }
            if xi.iter().any(|v| !v.is_finite()) {
                return Err(domain("ellipsoid", format!("normal {j} is not finite")));
            }
            if xi.iter().all(|v| v.is_zero()) {
                return Err(domain("ellipsoid", format!("normal {j} is zero")));
            }
        }
        Ok(Self { normals })
    }

    /// Normalizes `a_jᵀx ≤ b_j` (with `b_j > 0`) to `ξ_j = a_j / b_j`.
    pub fn from_halfspaces(rows: &[(DVector<T>, T)]) -> Result<Self> {
        let mut normals = Vec::with_capacity(rows.len());
        for (j, (a, b)) in rows.iter().enumerate() {
            if !(*b > T::zero()) || !b.is_finite() {
                return Err(domain(
                    "ellipsoid",
                    format!("offset of half-space {j} must be positive so the origin is interior"),
                ));
            }
            normals.push(a / *b);
        }
        Self::new(normals)
    }

    /// Symmetric box `|x_k| ≤ h_k` as `2n` normalized faces.
    pub fn symmetric_box(half_widths: &[T]) -> Result<Self> {
        let n = half_widths.len();
        let mut rows = Vec::with_capacity(2 * n);
        for (k, h) in half_widths.iter().enumerate() {
            let e = DVector::from_fn(n, |i, _| if i == k { T::one() } else { T::zero() });
            rows.push((e.clone(), *h));
            rows.push((-e, *h));
        }
        Self::from_halfspaces(&rows)
    }

    pub fn normals(&self) -> &[DVector<T>] {
        &self.normals
    }

    pub fn dim(&self) -> usize {
        self.normals[0].len()
    }

    pub fn len(&self) -> usize {
        self.normals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.normals.is_empty()
    }

    /// Adds faces keeping `|k_iᵀ x| ≤ limit_i` so that a linear feedback
    /// `u = −Kx` does not saturate anywhere in an ellipsoid that honors them.
    pub fn with_input_bounds(mut self, gain: &DMatrix<T>, limits: &[T]) -> Result<Self> {
        if gain.nrows() != limits.len() || gain.ncols() != self.dim() {
            return Err(dimension("ellipsoid", "gain/limit shapes disagree with constraint dimension"));
        }
        for (i, lim) in limits.iter().enumerate() {
            let row: DVector<T> = gain.row(i).transpose();
            if row.iter().all(|v| v.is_zero()) {
                continue;
            }
            if !(*lim > T::zero()) {
                return Err(domain("ellipsoid", format!("input bound {i} must be positive")));
            }
            self.normals.push(&row / *lim);
            self.normals.push(-&row / *lim);
        }
        Ok(self)
    }
}

/// `E_C = {x : xᵀPx ≤ 1}`, stored with both shape matrices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvariantEllipsoid<T: Scalar> {
    pub q: DMatrix<T>,
    pub p: DMatrix<T>,
    pub log_volume: T,
}

impl<T: Scalar> InvariantEllipsoid<T> {
    pub fn from_q(q: DMatrix<T>) -> Result<Self> {
        let q = symmetrize(&q);
        let p = spd_inverse(&q)?;
        let log_volume = log_det_spd(&q)?;
        Ok(Self { q, p, log_volume })
    }

    pub fn dim(&self) -> usize {
        self.q.nrows()
    }
}

pub(crate) fn log_det_spd<T: Scalar>(m: &DMatrix<T>) -> Result<T> {
    let c = nalgebra::Cholesky::new(symmetrize(m))
        .ok_or_else(|| Error::Numerical("log det of a matrix that is not positive definite".into()))?;
    Ok(c.l_dirty().diagonal().iter().fold(T::zero(), |acc, d| acc + d.ln()) * T::lit(2.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverOptions {
    /// Cap on total Newton steps across all barrier stages.
    pub max_iter: usize,
    /// Required optimality certificate, relative to `max(1, |log det Q|)`.
    pub rel_gap: f64,
    /// Barrier weight growth factor between centering stages.
    pub barrier_mu: f64,
    /// Feasibility tolerance used when verifying the result.
    pub tol_feas: f64,
    /// Required contraction `α ≥ 0`: the invariance LMI becomes
    /// `Q(A_SC + αI)ᵀ + (A_SC + αI)Q ⪯ 0`, which guarantees `γ ≥ 2α`. With
    /// `α = 0` the optimum usually leaves `γ` near zero.
    pub decay_margin: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self { max_iter: 500, rel_gap: 1e-3, barrier_mu: 10.0, tol_feas: 1e-8, decay_margin: 0.0 }
    }
}

/// Closed-loop safety dynamics and their slowest eigenvalue.
#[derive(Debug, Clone)]
pub struct ClosedLoop<T: Scalar> {
    pub a_sc: DMatrix<T>,
    pub max_real_part: T,
}

/// `A_SC = A − BK`, rejected unless Hurwitz.
pub fn closed_loop_matrix<T: Scalar>(plant: &LinearPlant<T>, k: &DMatrix<T>) -> Result<ClosedLoop<T>> {
    if k.nrows() != plant.m() || k.ncols() != plant.n() {
        return Err(dimension(
            "ellipsoid",
            format!("K is {}x{}, expected {}x{}", k.nrows(), k.ncols(), plant.m(), plant.n()),
        ));
    }
    if !all_finite(k) {
        return Err(domain("ellipsoid", "gain entries must be finite"));
    }
    let a_sc = &plant.a - &plant.b * k;
    let max_real_part = ensure_hurwitz(&a_sc)?;
    Ok(ClosedLoop { a_sc, max_real_part })
}

fn ensure_hurwitz<T: Scalar>(a_sc: &DMatrix<T>) -> Result<T> {
    if !a_sc.is_square() {
        return Err(dimension("ellipsoid", "A_SC must be square"));
    }
    let max_re = max_real_eigenvalue(a_sc);
    if !(max_re < T::lit(HURWITZ_MARGIN)) {
        return Err(Error::NotHurwitz { max_real_part: max_re.as_f64() });
    }
    Ok(max_re)
}

/// Baseline invariant ellipsoid from the Lyapunov equation
/// `A_SCᵀP₀ + P₀A_SC = −W`, scaled to the largest level set inside the region.
pub fn lyapunov_fallback_ellipsoid<T: Scalar>(
    a_sc: &DMatrix<T>,
    constraints: &PolyhedralConstraints<T>,
    w: &DMatrix<T>,
) -> Result<InvariantEllipsoid<T>> {
    ensure_hurwitz(a_sc)?;
    check_dims(a_sc, constraints)?;
    if !is_positive_definite(w) {
        return Err(domain("ellipsoid", "W must be symmetric positive definite"));
    }
    let p0 = solve_lyapunov(a_sc, w)?;
    let q0 = spd_inverse(&p0)?;
    let worst = constraints
        .normals()
        .iter()
        .map(|xi| quad_form(&q0, xi))
        .fold(T::zero(), |a, b| a.max(b));
    if !(worst > T::zero()) || !worst.is_finite() {
        return Err(Error::DegenerateConstraints);
    }
    InvariantEllipsoid::from_q(q0 / worst)
}

fn check_dims<T: Scalar>(a_sc: &DMatrix<T>, constraints: &PolyhedralConstraints<T>) -> Result<()> {
    if constraints.dim() != a_sc.nrows() {
        return Err(dimension(
            "ellipsoid",
            format!("constraints live in R^{}, A_SC is {}x{}", constraints.dim(), a_sc.nrows(), a_sc.ncols()),
        ));
    }
    Ok(())
}

pub(crate) fn quad_form<T: Scalar>(m: &DMatrix<T>, v: &DVector<T>) -> T {
    (v.transpose() * m * v)[(0, 0)]
}

/// Maximal-volume invariant ellipsoid via a log-barrier Newton method.
pub fn synthesize_max_ellipsoid<T: Scalar>(
    a_sc: &DMatrix<T>,
    constraints: &PolyhedralConstraints<T>,
    opts: &SolverOptions,
) -> Result<InvariantEllipsoid<T>> {
    let n = a_sc.nrows();
    if !(opts.decay_margin >= 0.0) {
        return Err(domain("ellipsoid", "decay_margin must be nonnegative"));
    }
    let shifted = a_sc + DMatrix::identity(n, n) * T::lit(opts.decay_margin);
    ensure_hurwitz(a_sc)?;
    if ensure_hurwitz(&shifted).is_err() {
        return Err(domain("ellipsoid", "decay_margin must stay below the closed-loop stability margin"));
    }
    let start = lyapunov_fallback_ellipsoid(&shifted, constraints, &DMatrix::identity(n, n))?;
    let q0 = start.q * T::lit(0.5);
    let q = barrier::solve(&shifted, constraints, q0, opts)?;
    InvariantEllipsoid::from_q(q)
}

mod barrier {
    use super::*;

    /// Symmetric basis `E_k` indexed by `(i, j)` with `i ≤ j`.
    struct Basis {
        pairs: Vec<(usize, usize)>,
    }

    impl Basis {
        fn new(n: usize) -> Self {
            let pairs = (0..n).flat_map(|j| (0..=j).map(move |i| (i, j))).collect();
            Self { pairs }
        }

        fn to_matrix<T: Scalar>(&self, n: usize, d: &DVector<T>) -> DMatrix<T> {
            let mut m = DMatrix::zeros(n, n);
            for (k, &(i, j)) in self.pairs.iter().enumerate() {
                m[(i, j)] += d[k];
                if i != j {
                    m[(j, i)] += d[k];
                }
            }
            m
        }

        /// `X E_k` for a dense `X`.
        fn right_mul<T: Scalar>(&self, x: &DMatrix<T>, k: usize) -> DMatrix<T> {
            let (i, j) = self.pairs[k];
            let n = x.nrows();
            let mut out = DMatrix::zeros(n, n);
            out.set_column(j, &x.column(i));
            if i != j {
                out.set_column(i, &x.column(j));
            }
            out
        }
    }

    struct Problem<'a, T: Scalar> {
        a: &'a DMatrix<T>,
        normals: &'a [DVector<T>],
        basis: Basis,
        n: usize,
    }

    struct Point<T: Scalar> {
        q_inv: DMatrix<T>,
        s_inv: DMatrix<T>,
        slacks: Vec<T>,
        value: T,
        log_det_q: T,
    }

    impl<T: Scalar> Problem<'_, T> {
        fn lmi(&self, q: &DMatrix<T>) -> DMatrix<T> {
            let aq = self.a * q;
            -(&aq + aq.transpose())
        }

        /// Barrier objective `−t log det Q − log det S(Q) − Σ log s_j`, or
        /// `None` outside the strict interior.
        fn evaluate(&self, q: &DMatrix<T>, t: T) -> Option<Point<T>> {
            let q = symmetrize(q);
            let cq = nalgebra::Cholesky::new(q.clone())?;
            let cs = nalgebra::Cholesky::new(symmetrize(&self.lmi(&q)))?;
            let mut slacks = Vec::with_capacity(self.normals.len());
            for xi in self.normals {
                let s = T::one() - quad_form(&q, xi);
                if !(s > T::zero()) {
                    return None;
                }
                slacks.push(s);
            }
            let ld = |c: &nalgebra::Cholesky<T, nalgebra::Dyn>| {
                c.l_dirty().diagonal().iter().fold(T::zero(), |acc, d| acc + d.ln()) * T::lit(2.0)
            };
            let log_det_q = ld(&cq);
            let log_det_s = ld(&cs);
            let value = -t * log_det_q - log_det_s - slacks.iter().fold(T::zero(), |acc, s| acc + s.ln());
            if !value.is_finite() {
                return None;
            }
            Some(Point { q_inv: symmetrize(&cq.inverse()), s_inv: symmetrize(&cs.inverse()), slacks, value, log_det_q })
        }

        fn gradient_hessian(&self, pt: &Point<T>, t: T) -> (DVector<T>, DMatrix<T>) {
            let dim = self.basis.pairs.len();
            let n = self.n;
            let mut m_k = Vec::with_capacity(dim);
            let mut n_k = Vec::with_capacity(dim);
            let mut c = DMatrix::zeros(self.normals.len(), dim);
            for k in 0..dim {
                m_k.push(self.basis.right_mul(&pt.q_inv, k));
                // L_k = E_k Aᵀ + A E_k; S⁻¹ L_k = S⁻¹E_kAᵀ + S⁻¹AE_k
                let ek = self.basis.to_matrix(n, &DVector::from_fn(dim, |i, _| if i == k { T::one() } else { T::zero() }));
                let l = &ek * self.a.transpose() + self.a * &ek;
                n_k.push(&pt.s_inv * l);
                let (i, j) = self.basis.pairs[k];
                for (r, xi) in self.normals.iter().enumerate() {
                    c[(r, k)] = if i == j { xi[i] * xi[i] } else { T::lit(2.0) * xi[i] * xi[j] };
                }
            }
            let inv_s: Vec<T> = pt.slacks.iter().map(|s| T::one() / *s).collect();
            let m_t: Vec<DMatrix<T>> = m_k.iter().map(|m| m.transpose()).collect();
            let n_t: Vec<DMatrix<T>> = n_k.iter().map(|m| m.transpose()).collect();
            let mut g = DVector::zeros(dim);
            let mut h = DMatrix::zeros(dim, dim);
            for k in 0..dim {
                let mut gk = -t * m_k[k].trace() + n_k[k].trace();
                for (r, is) in inv_s.iter().enumerate() {
                    gk += c[(r, k)] * *is;
                }
                g[k] = gk;
                for l in 0..=k {
                    let mut hkl = t * m_k[k].dot(&m_t[l]) + n_k[k].dot(&n_t[l]);
                    for (r, is) in inv_s.iter().enumerate() {
                        hkl += c[(r, k)] * c[(r, l)] * *is * *is;
                    }
                    h[(k, l)] = hkl;
                    h[(l, k)] = hkl;
                }
            }
            (g, h)
        }
    }

    pub(super) fn solve<T: Scalar>(
        a_sc: &DMatrix<T>,
        constraints: &PolyhedralConstraints<T>,
        q0: DMatrix<T>,
        opts: &SolverOptions,
    ) -> Result<DMatrix<T>> {
        let n = a_sc.nrows();
        let prob = Problem { a: a_sc, normals: constraints.normals(), basis: Basis::new(n), n };
        let nu = T::lit((n + constraints.len()) as f64);
        let mu = T::lit(opts.barrier_mu.max(1.5));
        // Iterate well past the requested certificate; the reported failure
        // threshold stays `rel_gap`.
        let target = T::lit(opts.rel_gap).min(T::lit(1e-7).max(T::eps() * T::lit(1e3)));
        let newton_tol = T::lit(1e-12).max(T::eps() * T::lit(100.0));
        let blowup = norm_inf(&q0) * T::lit(1e12);

        let mut q = q0;
        let mut t = T::one();
        let mut steps = 0usize;
        let mut last_log_det;
        loop {
            // Centering.
            let mut stalled = false;
            loop {
                let pt = prob
                    .evaluate(&q, t)
                    .ok_or_else(|| Error::Numerical("det-max iterate left the interior".into()))?;
                last_log_det = pt.log_det_q;
                let (g, h) = prob.gradient_hessian(&pt, t);
                let d = match nalgebra::Cholesky::new(h.clone()) {
                    Some(c) => c.solve(&(-&g)),
                    None => match h.lu().solve(&(-&g)) {
                        Some(d) => d,
                        None => {
                            stalled = true;
                            break;
                        }
                    },
                };
                let decrement = -g.dot(&d);
                // Decrements below the rounding level of the objective cannot be
                // resolved by the line search.
                let floor = newton_tol.max(T::eps() * T::lit(10.0) * pt.value.abs());
                if !(decrement > T::lit(2.0) * floor) {
                    break;
                }
                if steps >= opts.max_iter {
                    return Err(failure(steps, nu / t, &q));
                }
                steps += 1;
                let dq = prob.basis.to_matrix(n, &d);
                let slope = g.dot(&d);
                let mut step = T::one();
                let accepted = loop {
                    let cand = &q + &dq * step;
                    if let Some(next) = prob.evaluate(&cand, t) {
                        if next.value <= pt.value + T::lit(0.25) * step * slope {
                            break Some(cand);
                        }
                    }
                    step *= T::lit(0.5);
                    if step < T::lit(1e-14) {
                        break None;
                    }
                };
                match accepted {
                    Some(next) => q = symmetrize(&next),
                    None => {
                        stalled = true;
                        break;
                    }
                }
                if norm_inf(&q) > blowup {
                    return Err(domain("ellipsoid", "det-max objective is unbounded; the safe region must be bounded in every unstable-free direction"));
                }
            }
            let gap = nu / t;
            let scale = last_log_det.abs().max(T::one());
            if gap <= target || (stalled && gap <= T::lit(opts.rel_gap) * scale) {
                log::debug!("det-max converged: {steps} Newton steps, gap bound {:e}", gap.as_f64());
                return Ok(q);
            }
            if stalled {
                return Err(failure(steps, gap, &q));
            }
            t *= mu;
        }
    }

    fn failure<T: Scalar>(iterations: usize, gap: T, q: &DMatrix<T>) -> Error {
        Error::SolverFailure {
            iterations,
            gap: gap.as_f64(),
            last_feasible: Some(q.iter().map(|v| v.as_f64()).collect()),
        }
    }
}

/// Saturation margin of a linear feedback over the ellipsoid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaturationCheck {
    /// `max_{x ∈ E_C} |k_iᵀx| = sqrt(k_iᵀ Q k_i)` per input channel.
    pub peak_input: Vec<f64>,
    pub limits: Vec<f64>,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub lmi_max_eigenvalue: f64,
    pub max_containment: f64,
    pub min_eigenvalue_q: f64,
    pub asymmetry: f64,
    pub symmetric: bool,
    pub positive_definite: bool,
    pub invariant: bool,
    pub contained: bool,
    pub saturation: Option<SaturationCheck>,
}

impl VerificationReport {
    pub fn passed(&self) -> bool {
        self.symmetric
            && self.positive_definite
            && self.invariant
            && self.contained
            && self.saturation.as_ref().is_none_or(|s| s.pass)
    }
}

/// Checks invariance, containment and definiteness of a candidate `Q`.
pub fn verify_ellipsoid<T: Scalar>(
    q: &DMatrix<T>,
    a_sc: &DMatrix<T>,
    constraints: &PolyhedralConstraints<T>,
) -> VerificationReport {
    let asym = asymmetry(q);
    let qs = symmetrize(q);
    let aq = a_sc * &qs;
    let lmi = &aq + aq.transpose();
    let lmi_max = lambda_max(&lmi);
    let max_containment = constraints
        .normals()
        .iter()
        .map(|xi| quad_form(&qs, xi))
        .fold(T::min_value().map(|v| -v.abs()).unwrap_or(-T::one()), |a, b| a.max(b));
    let min_eig = lambda_min(&qs);
    let q_scale = norm_inf(&qs);
    VerificationReport {
        lmi_max_eigenvalue: lmi_max.as_f64(),
        max_containment: max_containment.as_f64(),
        min_eigenvalue_q: min_eig.as_f64(),
        asymmetry: asym.as_f64(),
        symmetric: asym <= T::lit(SYMMETRY_TOL),
        positive_definite: min_eig > T::zero(),
        invariant: lmi_max <= T::lit(LMI_TOL) * q_scale,
        contained: max_containment <= T::one() + T::lit(CONTAINMENT_TOL),
        saturation: None,
    }
}

/// Peak of `|k_iᵀx|` over `{xᵀQ⁻¹x ≤ 1}` compared against per-channel limits.
pub fn check_saturation<T: Scalar>(q: &DMatrix<T>, gain: &DMatrix<T>, limits: &[T]) -> SaturationCheck {
    let peak_input: Vec<f64> = gain
        .row_iter()
        .map(|r| {
            let k: DVector<T> = r.transpose();
            quad_form(q, &k).max(T::zero()).sqrt().as_f64()
        })
        .collect();
    let limits: Vec<f64> = limits.iter().map(|l| l.as_f64()).collect();
    let pass = peak_input.iter().zip(&limits).all(|(p, l)| *p <= *l * (1.0 + CONTAINMENT_TOL));
    SaturationCheck { peak_input, limits, pass }
}

/// `‖PQ − I‖∞`.
pub fn inverse_residual<T: Scalar>(e: &InvariantEllipsoid<T>) -> T {
    let n = e.dim();
    norm_inf(&(&e.p * &e.q - DMatrix::identity(n, n)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_box(n: usize) -> PolyhedralConstraints<f64> {
        PolyhedralConstraints::symmetric_box(&vec![1.0; n]).unwrap()
    }

    #[test]
    fn closed_loop_scalar() {
        let plant = LinearPlant::<f64>::new(DMatrix::zeros(1, 1), DMatrix::from_element(1, 1, 1.0)).unwrap();
        let cl = closed_loop_matrix(&plant, &DMatrix::from_element(1, 1, 1.0)).unwrap();
        assert_eq!(cl.a_sc[(0, 0)], -1.0);
        assert!((cl.max_real_part + 1.0).abs() < 1e-12);
    }

    #[test]
    fn closed_loop_double_integrator() {
        let plant = LinearPlant::<f64>::new(
            DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]),
            DMatrix::from_column_slice(2, 1, &[0.0, 1.0]),
        )
        .unwrap();
        let cl = closed_loop_matrix(&plant, &DMatrix::from_row_slice(1, 2, &[1.0, 2.0])).unwrap();
        assert_eq!(cl.a_sc, DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, -2.0]));
        // Double root at −1; the Schur solver resolves it to ~sqrt(eps).
        assert!((cl.max_real_part + 1.0).abs() < 1e-6);
    }

    #[test]
    fn closed_loop_rejects_marginal() {
        let plant = LinearPlant::new(DMatrix::zeros(1, 1), DMatrix::from_element(1, 1, 1.0)).unwrap();
        assert!(matches!(
            closed_loop_matrix(&plant, &DMatrix::zeros(1, 1)),
            Err(Error::NotHurwitz { .. })
        ));
    }

    #[test]
    fn plant_dimension_checks() {
        assert!(LinearPlant::new(DMatrix::<f64>::zeros(2, 3), DMatrix::zeros(2, 1)).is_err());
        assert!(LinearPlant::new(DMatrix::<f64>::zeros(2, 2), DMatrix::zeros(3, 1)).is_err());
        let mut a = DMatrix::<f64>::zeros(2, 2);
        a[(0, 0)] = f64::NAN;
        assert!(LinearPlant::new(a, DMatrix::zeros(2, 1)).is_err());
    }

    #[test]
    fn halfspace_normalization() {
        let c = PolyhedralConstraints::from_halfspaces(&[(DVector::from_vec(vec![2.0, 0.0]), 4.0)]).unwrap();
        assert_eq!(c.normals()[0], DVector::from_vec(vec![0.5, 0.0]));
        assert!(PolyhedralConstraints::from_halfspaces(&[(DVector::from_vec(vec![1.0]), 0.0)]).is_err());
        assert!(PolyhedralConstraints::<f64>::new(vec![DVector::zeros(2)]).is_err());
        assert!(PolyhedralConstraints::<f64>::new(vec![]).is_err());
    }

    #[test]
    fn synthesize_identity_box() {
        let a = -DMatrix::<f64>::identity(2, 2);
        let e = synthesize_max_ellipsoid(&a, &unit_box(2), &SolverOptions::default()).unwrap();
        assert!((e.q.clone() - DMatrix::identity(2, 2)).amax() < 1e-5, "{}", e.q);
        assert!(e.log_volume.abs() < 1e-5);
        assert!(verify_ellipsoid(&e.q, &a, &unit_box(2)).passed());
    }

    #[test]
    fn synthesize_scalar_interval() {
        let a = DMatrix::from_element(1, 1, -1.0);
        let e = synthesize_max_ellipsoid(&a, &unit_box(1), &SolverOptions::default()).unwrap();
        assert!((e.q[(0, 0)] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn synthesize_single_precision() {
        let a = DMatrix::from_element(1, 1, -1.0f32);
        let c = PolyhedralConstraints::symmetric_box(&[1.0f32]).unwrap();
        let opts = SolverOptions { rel_gap: 1e-3, ..Default::default() };
        let e = synthesize_max_ellipsoid(&a, &c, &opts).unwrap();
        assert!((e.q[(0, 0)] - 1.0).abs() < 1e-3);
    }

    #[test]
    fn fallback_identity() {
        let a = -DMatrix::<f64>::identity(2, 2);
        let e = lyapunov_fallback_ellipsoid(&a, &unit_box(2), &(DMatrix::identity(2, 2) * 2.0)).unwrap();
        assert!((e.q - DMatrix::identity(2, 2)).amax() < 1e-14);
        assert!((e.p - DMatrix::identity(2, 2)).amax() < 1e-14);
    }

    #[test]
    fn fallback_scaled_interval() {
        let a = DMatrix::<f64>::from_element(1, 1, -1.0);
        let c = PolyhedralConstraints::new(vec![DVector::from_element(1, 2.0)]).unwrap();
        let e = lyapunov_fallback_ellipsoid(&a, &c, &DMatrix::from_element(1, 1, 2.0)).unwrap();
        // P0 = 1, c = 1/4 → Q = 0.25, E = [−0.5, 0.5]
        assert!((e.q[(0, 0)] - 0.25).abs() < 1e-15);
    }

    #[test]
    fn fallback_damped_oscillator_verifies() {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, -2.0]);
        let e = lyapunov_fallback_ellipsoid(&a, &unit_box(2), &DMatrix::identity(2, 2)).unwrap();
        let r = verify_ellipsoid(&e.q, &a, &unit_box(2));
        assert!(r.passed(), "{r:?}");
        assert!((r.max_containment - 1.0).abs() < 1e-12);
        assert!(inverse_residual(&e) < INVERSE_TOL);
    }

    #[test]
    fn fallback_rejects_bad_inputs() {
        let c = unit_box(2);
        assert!(matches!(
            lyapunov_fallback_ellipsoid(&DMatrix::identity(2, 2), &c, &DMatrix::identity(2, 2)),
            Err(Error::NotHurwitz { .. })
        ));
        assert!(lyapunov_fallback_ellipsoid(&-DMatrix::identity(2, 2), &c, &-DMatrix::identity(2, 2)).is_err());
    }

    #[test]
    fn verify_examples() {
        let eye = DMatrix::<f64>::identity(2, 2);
        let r = verify_ellipsoid(&eye, &-eye.clone(), &unit_box(2));
        assert!(r.passed());
        assert!((r.lmi_max_eigenvalue + 2.0).abs() < 1e-12);
        assert!((r.max_containment - 1.0).abs() < 1e-12);

        let r = verify_ellipsoid(&(eye.clone() * 4.0), &-eye.clone(), &unit_box(2));
        assert!(!r.contained && r.invariant);
        assert!((r.max_containment - 4.0).abs() < 1e-12);

        let r = verify_ellipsoid(&eye, &eye, &unit_box(2));
        assert!(!r.invariant);
        assert!((r.lmi_max_eigenvalue - 2.0).abs() < 1e-12);
    }

    #[test]
    fn saturation_rows_bound_feedback() {
        let a = -DMatrix::<f64>::identity(2, 2);
        let k = DMatrix::from_row_slice(1, 2, &[2.0, 0.0]);
        let c = unit_box(2).with_input_bounds(&k, &[1.0]).unwrap();
        let e = synthesize_max_ellipsoid(&a, &c, &SolverOptions::default()).unwrap();
        let sat = check_saturation(&e.q, &k, &[1.0]);
        assert!(sat.pass, "{sat:?}");
        assert!((sat.peak_input[0] - 1.0).abs() < 1e-3);
    }

    #[test]
    fn unbounded_region_reports_error() {
        let a = -DMatrix::<f64>::identity(2, 2);
        let c = PolyhedralConstraints::new(vec![DVector::from_vec(vec![1.0, 0.0]), DVector::from_vec(vec![-1.0, 0.0])]).unwrap();
        assert!(synthesize_max_ellipsoid(&a, &c, &SolverOptions::default()).is_err());
    }
}
