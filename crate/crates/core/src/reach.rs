//! Supporting-hyperplane over-approximation of the set reachable from the
//! inner safe set under arbitrary admissible inputs, and the search for the
//! longest uncertain-control period it certifies.
//!
//! Faces of the initial polytope come in opposite pairs `±t_k` for a basis
//! `{t_k}` (axis-aligned by default). Face normals are transported backwards
//! along the dynamics, `α(τ) = e^{−Aᵀτ} α`, and their offsets grow by the
//! running integral of the worst-case input contribution
//! `max_{u ∈ U} ⟨α(τ), B u⟩`. In the coordinates `z = T e^{−At} x` the
//! over-approximation stays a box, so its vertices are the `2ⁿ` box corners
//! mapped forward by `e^{At} T⁻¹`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::ellipsoid::quad_form;
use crate::error::{dimension, domain, Error, Result};
use crate::expm::matrix_exponential;
use crate::linalg::{cholesky_factor, spd_inverse, symmetrize, sym_eigenvalues};
use crate::scalar::Scalar;

/// Largest state dimension for which box corners are enumerated.
pub const MAX_VERTEX_DIM: usize = 16;
/// Richardson disagreement tolerance, relative to the face offset.
pub const QUADRATURE_TOL: f64 = 1e-6;

/// Axis-aligned admissible input box `U = [lower, upper]`, in deviation
/// coordinates around the equilibrium input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlPolytope<T: Scalar> {
    pub lower: DVector<T>,
    pub upper: DVector<T>,
}

impl<T: Scalar> ControlPolytope<T> {
    pub fn new(lower: DVector<T>, upper: DVector<T>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(dimension("reach", "input bounds have different lengths"));
        }
        for (k, (l, u)) in lower.iter().zip(upper.iter()).enumerate() {
            if !l.is_finite() || !u.is_finite() {
                return Err(domain("reach", format!("input bound {k} is not finite")));
            }
            if l > u {
                return Err(domain("reach", format!("input channel {k} has lower > upper")));
            }
        }
        Ok(Self { lower, upper })
    }

    pub fn symmetric(half_widths: &[T]) -> Result<Self> {
        let up = DVector::from_column_slice(half_widths);
        Self::new(-&up, up)
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    /// Support function `max_{u ∈ U} ⟨c, u⟩`, evaluated channelwise.
    pub fn support(&self, c: &DVector<T>) -> T {
        c.iter()
            .zip(self.lower.iter().zip(self.upper.iter()))
            .fold(T::zero(), |acc, (ck, (l, u))| acc + (*l * *ck).max(*u * *ck))
    }

    pub fn contains(&self, u: &DVector<T>) -> bool {
        u.iter().zip(self.lower.iter().zip(self.upper.iter())).all(|(v, (l, h))| *l <= *v && *v <= *h)
    }

    /// Corner selected by the low bits of `index` (bit k set → upper bound).
    pub fn corner(&self, index: usize) -> DVector<T> {
        DVector::from_fn(self.dim(), |k, _| if index >> k & 1 == 1 { self.upper[k] } else { self.lower[k] })
    }

    pub fn num_corners(&self) -> usize {
        1usize << self.dim()
    }

    /// Componentwise clamp into the box.
    pub fn clamp(&self, u: &DVector<T>) -> DVector<T> {
        DVector::from_fn(u.len(), |k, _| u[k].max(self.lower[k]).min(self.upper[k]))
    }

    /// `U + offset`. Absolute actuator limits become deviation limits with
    /// `translated(&-u_e)`.
    pub fn translated(&self, offset: &DVector<T>) -> Self {
        Self { lower: &self.lower + offset, upper: &self.upper + offset }
    }

    /// Box scaled about the origin.
    pub fn scaled(&self, factor: T) -> Self {
        Self { lower: &self.lower * factor, upper: &self.upper * factor }
    }

    /// Componentwise `self ⊆ other`.
    pub fn is_subset_of(&self, other: &Self) -> bool {
        self.lower.iter().zip(other.lower.iter()).all(|(a, b)| a >= b)
            && self.upper.iter().zip(other.upper.iter()).all(|(a, b)| a <= b)
    }
}

/// `{x : α_iᵀx ≤ b_i}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HalfspaceSet<T: Scalar> {
    pub normals: Vec<DVector<T>>,
    pub offsets: Vec<T>,
}

impl<T: Scalar> HalfspaceSet<T> {
    pub fn new(normals: Vec<DVector<T>>, offsets: Vec<T>) -> Result<Self> {
        if normals.len() != offsets.len() || normals.is_empty() {
            return Err(dimension("reach", "normals and offsets must be nonempty and of equal count"));
        }
        let n = normals[0].len();
        for (i, a) in normals.iter().enumerate() {
            if a.len() != n {
                return Err(dimension("reach", format!("normal {i} has wrong length")));
            }
            if a.iter().all(|v| v.is_zero()) || a.iter().any(|v| !v.is_finite()) {
                return Err(domain("reach", format!("normal {i} must be nonzero and finite")));
            }
            if !offsets[i].is_finite() {
                return Err(domain("reach", format!("offset {i} is not finite")));
            }
        }
        Ok(Self { normals, offsets })
    }

    pub fn dim(&self) -> usize {
        self.normals[0].len()
    }

    pub fn contains(&self, x: &DVector<T>) -> bool {
        self.normals.iter().zip(&self.offsets).all(|(a, b)| a.dot(x) <= *b)
    }

    /// Splits a paired set `(+t_0, −t_0, +t_1, −t_1, …)` into the basis `T`
    /// (rows `t_k`) and the upper/lower bounds of `z = T x`. `None` when the
    /// set is not in that form or the basis is singular.
    pub fn as_box(&self) -> Option<BoxForm<T>> {
        let n = self.dim();
        if self.normals.len() != 2 * n {
            return None;
        }
        let mut basis = DMatrix::zeros(n, n);
        let mut upper = DVector::zeros(n);
        let mut lower = DVector::zeros(n);
        for k in 0..n {
            let plus = &self.normals[2 * k];
            let minus = &self.normals[2 * k + 1];
            if (plus + minus).iter().any(|v| !v.is_zero()) {
                return None;
            }
            basis.set_row(k, &plus.transpose());
            upper[k] = self.offsets[2 * k];
            lower[k] = -self.offsets[2 * k + 1];
        }
        let inverse = basis.clone().try_inverse()?;
        Some(BoxForm { basis, inverse, lower, upper })
    }
}

/// Box `lower ≤ T x ≤ upper`.
#[derive(Debug, Clone)]
pub struct BoxForm<T: Scalar> {
    pub basis: DMatrix<T>,
    pub inverse: DMatrix<T>,
    pub lower: DVector<T>,
    pub upper: DVector<T>,
}

/// Normal directions for the polytope around the inner safe set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormalChoice {
    /// `±e_k`.
    #[default]
    Axis,
    /// `±v_k` for the eigenvectors `v_k` of `P`; the tightest box around the
    /// ellipsoid.
    PrincipalAxes,
    /// Box whose edges are a `P`-orthonormal basis grown from `B, AB, A²B, …`.
    /// Each input channel then pushes mostly along a single edge, which keeps
    /// the box from wrapping around the input reach set.
    InputAligned,
}

/// Paired normals `(+t_0, −t_0, …)` for the given choice. `A` and `B` are only
/// read by [`NormalChoice::InputAligned`].
pub fn box_normals<T: Scalar>(
    p: &DMatrix<T>,
    a: &DMatrix<T>,
    b: &DMatrix<T>,
    choice: NormalChoice,
) -> Result<Vec<DVector<T>>> {
    let n = p.nrows();
    let basis = match choice {
        NormalChoice::Axis => DMatrix::identity(n, n),
        NormalChoice::PrincipalAxes => nalgebra::SymmetricEigen::new(symmetrize(p)).eigenvectors,
        NormalChoice::InputAligned => {
            if a.shape() != (n, n) || b.nrows() != n {
                return Err(dimension("reach", "A and B must match the dimension of P"));
            }
            // Edges E with EᵀPE = I; face k has normal P e_k, a row of E⁻¹ = EᵀP.
            p * conjugate_krylov_basis(p, a, b)
        }
    };
    Ok((0..n)
        .flat_map(|k| {
            let v: DVector<T> = basis.column(k).into_owned();
            [v.clone(), -v]
        })
        .collect())
}

fn conjugate_krylov_basis<T: Scalar>(p: &DMatrix<T>, a: &DMatrix<T>, b: &DMatrix<T>) -> DMatrix<T> {
    let n = p.nrows();
    let mut candidates: Vec<DVector<T>> = Vec::new();
    let mut block = b.clone();
    for _ in 0..n {
        candidates.extend(block.column_iter().map(|c| c.into_owned()));
        block = a * &block;
    }
    candidates.extend((0..n).map(|k| DVector::from_fn(n, |i, _| if i == k { T::one() } else { T::zero() })));

    let mut edges: Vec<DVector<T>> = Vec::with_capacity(n);
    let tol = T::eps().sqrt();
    for v in candidates {
        if edges.len() == n {
            break;
        }
        let norm0 = quad_form(p, &v).sqrt();
        if !(norm0 > T::zero()) {
            continue;
        }
        let mut w = v;
        for _ in 0..2 {
            for e in &edges {
                let c = (e.transpose() * p * &w)[(0, 0)];
                w -= e * c;
            }
        }
        let norm = quad_form(p, &w).sqrt();
        if norm > tol * norm0 {
            edges.push(w / norm);
        }
    }
    DMatrix::from_columns(&edges)
}

/// Tightest polytope with the given normals containing `E_ε = {xᵀPx ≤ ε}`:
/// `b_i = sqrt(ε α_iᵀ P⁻¹ α_i)`.
pub fn bounding_polytope<T: Scalar>(p: &DMatrix<T>, epsilon: T, normals: &[DVector<T>]) -> Result<HalfspaceSet<T>> {
    if !(epsilon > T::zero() && epsilon <= T::one()) {
        return Err(domain("reach", format!("epsilon must lie in (0, 1], got {}", epsilon.as_f64())));
    }
    let q = spd_inverse(p).map_err(|_| domain("reach", "P must be positive definite"))?;
    if normals.iter().any(|a| a.len() != p.nrows()) {
        return Err(dimension("reach", "normal length differs from state dimension"));
    }
    if !positively_spans(normals, p.nrows()) {
        return Err(Error::UnboundedPolytope);
    }
    let offsets = normals.iter().map(|a| (epsilon * quad_form(&q, a)).sqrt()).collect();
    HalfspaceSet::new(normals.to_vec(), offsets)
}

/// Whether nonnegative combinations of `normals` cover `ℝⁿ`: each `±e_k`
/// must lie in their cone.
pub fn positively_spans<T: Scalar>(normals: &[DVector<T>], n: usize) -> bool {
    if normals.is_empty() {
        return false;
    }
    let a = DMatrix::from_columns(normals);
    let scale = a.amax().max(T::one());
    for k in 0..n {
        for sign in [T::one(), -T::one()] {
            let target = DVector::from_fn(n, |i, _| if i == k { sign * scale } else { T::zero() });
            let x = nnls(&a, &target);
            if (&a * x - &target).norm() > T::lit(1e-9).max(T::eps().sqrt()) * scale {
                return false;
            }
        }
    }
    true
}

/// Lawson–Hanson non-negative least squares `min ‖Ax − b‖, x ≥ 0`.
fn nnls<T: Scalar>(a: &DMatrix<T>, b: &DVector<T>) -> DVector<T> {
    let n = a.ncols();
    let mut x = DVector::zeros(n);
    let mut passive = vec![false; n];
    let tol = T::lit(1e-12) * a.amax().max(T::one());
    for _ in 0..(3 * n + 10) {
        let w = a.transpose() * (b - a * &x);
        let candidate = (0..n)
            .filter(|&j| !passive[j] && w[j] > tol)
            .max_by(|&i, &j| w[i].partial_cmp(&w[j]).unwrap_or(std::cmp::Ordering::Equal));
        let Some(j) = candidate else { break };
        passive[j] = true;
        loop {
            let idx: Vec<usize> = (0..n).filter(|&i| passive[i]).collect();
            let sub = a.select_columns(&idx);
            let z_sub = match sub.clone().svd(true, true).solve(b, T::eps()) {
                Ok(z) => z,
                Err(_) => return x,
            };
            let mut z = DVector::zeros(n);
            for (p, &i) in idx.iter().enumerate() {
                z[i] = z_sub[p];
            }
            if idx.iter().all(|&i| z[i] > T::zero()) {
                x = z;
                break;
            }
            let mut alpha = T::one();
            for &i in &idx {
                if z[i] <= T::zero() {
                    let denom = x[i] - z[i];
                    if denom > T::zero() {
                        alpha = alpha.min(x[i] / denom);
                    }
                }
            }
            x = &x + (z - &x) * alpha;
            for &i in &idx {
                if x[i] <= tol {
                    passive[i] = false;
                    x[i] = T::zero();
                }
            }
            if !passive.iter().any(|p| *p) {
                break;
            }
        }
    }
    x
}

/// Over-approximation `R⁺(t)` at one time instant.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReachOverapprox<T: Scalar> {
    pub t: T,
    /// `e^{At}`.
    pub forward_map: DMatrix<T>,
    /// Basis `T` of the paired face normals.
    pub basis: DMatrix<T>,
    /// Offsets in the order of the initial normals `(+t_0, −t_0, …)`.
    pub box_offsets: Vec<T>,
    pub vertices: Vec<DVector<T>>,
}

impl<T: Scalar> ReachOverapprox<T> {
    /// Face normals at time `t`, `α_i(t) = e^{−Aᵀt} α_i`.
    pub fn face_normals(&self) -> Result<Vec<DVector<T>>> {
        let inv = self
            .forward_map
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::Numerical("singular forward map".into()))?;
        let m = &self.basis * inv;
        Ok((0..self.basis.nrows())
            .flat_map(|k| {
                let r: DVector<T> = m.row(k).transpose();
                [r.clone(), -r]
            })
            .collect())
    }

    /// Exact membership test in transformed coordinates.
    pub fn contains(&self, x: &DVector<T>) -> Result<bool> {
        let y = self
            .forward_map
            .clone()
            .lu()
            .solve(x)
            .ok_or_else(|| Error::Numerical("singular forward map".into()))?;
        let z = &self.basis * y;
        Ok((0..z.len()).all(|k| z[k] <= self.box_offsets[2 * k] && -z[k] <= self.box_offsets[2 * k + 1]))
    }

    pub fn as_halfspaces(&self) -> Result<HalfspaceSet<T>> {
        HalfspaceSet::new(self.face_normals()?, self.box_offsets.clone())
    }
}

/// `max_i x_iᵀ P x_i ≤ 1`; exact for the polytope since `xᵀPx` is convex.
pub fn contained_in_ellipsoid<T: Scalar>(reach: &ReachOverapprox<T>, p: &DMatrix<T>) -> bool {
    max_vertex_value(&reach.vertices, p) <= T::one()
}

pub fn max_vertex_value<T: Scalar>(vertices: &[DVector<T>], p: &DMatrix<T>) -> T {
    vertices.iter().map(|x| quad_form(p, x)).fold(T::zero(), |a, b| a.max(b))
}

/// Incrementally advances face offsets in time.
#[derive(Debug, Clone)]
pub struct ReachPropagator<T: Scalar> {
    a: DMatrix<T>,
    b: DMatrix<T>,
    u: ControlPolytope<T>,
    boxed: BoxForm<T>,
    quad_step: T,
    t: T,
    /// Accumulated input contribution for `+t_k` and `−t_k` faces.
    grow_up: DVector<T>,
    grow_lo: DVector<T>,
}

impl<T: Scalar> ReachPropagator<T> {
    pub fn new(a: &DMatrix<T>, b: &DMatrix<T>, u: &ControlPolytope<T>, init: &HalfspaceSet<T>, quad_step: T) -> Result<Self> {
        let n = a.nrows();
        if !a.is_square() || b.nrows() != n || b.ncols() != u.dim() || init.dim() != n {
            return Err(dimension("reach", "A, B, U and the initial polytope disagree in dimension"));
        }
        if !(quad_step > T::zero()) {
            return Err(domain("reach", "quadrature step must be positive"));
        }
        let boxed = init
            .as_box()
            .ok_or_else(|| domain("reach", "initial polytope must be in paired box-normal form"))?;
        Ok(Self {
            a: a.clone(),
            b: b.clone(),
            u: u.clone(),
            boxed,
            quad_step,
            t: T::zero(),
            grow_up: DVector::zeros(n),
            grow_lo: DVector::zeros(n),
        })
    }

    pub fn time(&self) -> T {
        self.t
    }

    /// Integrand `max_u ⟨α(τ), Bu⟩` for every face, stacked `[+ faces; − faces]`.
    fn integrand(&self, tau: T) -> Result<DVector<T>> {
        let g = &self.boxed.basis * matrix_exponential(&self.a, -tau)? * &self.b;
        let n = g.nrows();
        let mut out = DVector::zeros(2 * n);
        for k in 0..n {
            let c: DVector<T> = g.row(k).transpose();
            out[k] = self.u.support(&c);
            out[n + k] = self.u.support(&-c);
        }
        Ok(out)
    }

    /// Advances to `t_next ≥ t` with trapezoid rules at `h`, `h/2`, `h/4`
    /// and Richardson extrapolation; the extrapolation disagreement is added
    /// as an outward margin.
    pub fn advance_to(&mut self, t_next: T) -> Result<()> {
        if t_next < self.t {
            return Err(domain("reach", "cannot propagate backwards in time"));
        }
        let span = t_next - self.t;
        if span.is_zero() {
            return Ok(());
        }
        let pieces = (span / self.quad_step).ceil().as_f64().max(1.0) as usize;
        let fine = 4 * pieces;
        let h4 = span / T::lit(fine as f64);
        let samples = (0..=fine)
            .map(|i| self.integrand(self.t + h4 * T::lit(i as f64)))
            .collect::<Result<Vec<_>>>()?;
        let trap = |stride: usize| {
            let h = h4 * T::lit(stride as f64);
            let mut acc = (&samples[0] + &samples[fine]) * T::lit(0.5);
            let mut i = stride;
            while i < fine {
                acc += &samples[i];
                i += stride;
            }
            acc * h
        };
        let t1 = trap(4);
        let t2 = trap(2);
        let t4 = trap(1);
        let third = T::lit(1.0 / 3.0);
        let r1 = (&t2 * T::lit(4.0) - &t1) * third;
        let r2 = (&t4 * T::lit(4.0) - &t2) * third;
        let n = self.grow_up.len();
        for i in 0..2 * n {
            let disagreement = (r2[i] - r1[i]).abs();
            let inc = r2[i] + disagreement;
            let (grow, base) = if i < n {
                (&mut self.grow_up[i], self.boxed.upper[i])
            } else {
                (&mut self.grow_lo[i - n], -self.boxed.lower[i - n])
            };
            *grow += inc;
            let offset = (base + *grow).abs();
            if disagreement > T::lit(QUADRATURE_TOL) * offset.max(T::eps()) {
                return Err(Error::Quadrature { face: i, t: t_next.as_f64(), disagreement: disagreement.as_f64() });
            }
        }
        self.t = t_next;
        Ok(())
    }

    /// Offsets in the paired order `(+t_0, −t_0, …)`.
    pub fn offsets(&self) -> Vec<T> {
        (0..self.grow_up.len())
            .flat_map(|k| [self.boxed.upper[k] + self.grow_up[k], -self.boxed.lower[k] + self.grow_lo[k]])
            .collect()
    }

    /// `e^{At} T⁻¹`, mapping box coordinates to states.
    fn vertex_map(&self) -> Result<(DMatrix<T>, DMatrix<T>)> {
        let fwd = if self.t.is_zero() {
            DMatrix::identity(self.a.nrows(), self.a.nrows())
        } else {
            matrix_exponential(&self.a, self.t)?
        };
        let m = &fwd * &self.boxed.inverse;
        Ok((fwd, m))
    }

    fn corner_coords(&self) -> Result<(Vec<T>, Vec<T>)> {
        let n = self.grow_up.len();
        if n > MAX_VERTEX_DIM {
            return Err(domain("reach", format!("vertex enumeration limited to n ≤ {MAX_VERTEX_DIM}")));
        }
        let off = self.offsets();
        let hi = (0..n).map(|k| off[2 * k]).collect();
        let lo = (0..n).map(|k| -off[2 * k + 1]).collect();
        Ok((lo, hi))
    }

    /// Largest `xᵀPx` over the current vertices, without materializing them.
    pub fn max_vertex_value(&self, p: &DMatrix<T>) -> Result<T> {
        let (lo, hi) = self.corner_coords()?;
        let (_, m) = self.vertex_map()?;
        let h = symmetrize(&(m.transpose() * p * &m));
        let n = lo.len();
        let mut best = T::zero();
        let mut z = DVector::zeros(n);
        for idx in 0..(1usize << n) {
            for k in 0..n {
                z[k] = if idx >> k & 1 == 1 { hi[k] } else { lo[k] };
            }
            best = best.max(quad_form(&h, &z));
        }
        Ok(best)
    }

    pub fn snapshot(&self) -> Result<ReachOverapprox<T>> {
        let (lo, hi) = self.corner_coords()?;
        let (fwd, m) = self.vertex_map()?;
        let n = lo.len();
        let vertices = (0..(1usize << n))
            .map(|idx| {
                let z = DVector::from_fn(n, |k, _| if idx >> k & 1 == 1 { hi[k] } else { lo[k] });
                &m * z
            })
            .collect();
        Ok(ReachOverapprox {
            t: self.t,
            forward_map: fwd,
            basis: self.boxed.basis.clone(),
            box_offsets: self.offsets(),
            vertices,
        })
    }
}

/// `R⁺(init, t)` for `ẋ = Ax + Bu`, `u ∈ U`.
pub fn reach_overapprox_at<T: Scalar>(
    a: &DMatrix<T>,
    b: &DMatrix<T>,
    u: &ControlPolytope<T>,
    init: &HalfspaceSet<T>,
    t: T,
    quad_step: T,
) -> Result<ReachOverapprox<T>> {
    if !(t >= T::zero()) {
        return Err(domain("reach", "t must be nonnegative"));
    }
    let mut prop = ReachPropagator::new(a, b, u, init, quad_step)?;
    prop.advance_to(t)?;
    prop.snapshot()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReachOptions {
    /// Time grid on which containment is checked, s.
    pub grid_step: f64,
    /// Search horizon, s.
    pub t_max: f64,
    /// Quadrature step; `None` uses `grid_step / 10`.
    pub quad_step: Option<f64>,
    pub normals: NormalChoice,
}

impl Default for ReachOptions {
    fn default() -> Self {
        Self { grid_step: 0.01, t_max: 10.0, quad_step: None, normals: NormalChoice::Axis }
    }
}

impl ReachOptions {
    pub fn quad_step(&self) -> f64 {
        self.quad_step.unwrap_or(self.grid_step / 10.0)
    }
}

/// Outcome of the uncertain-control period search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingResult {
    /// Largest grid time up to which every grid time keeps `R⁺ ⊆ E_C`, s.
    pub t_uc: f64,
    pub t_sr: f64,
    pub epsilon: f64,
    /// `t_uc > t_sr`.
    pub feasible: bool,
    /// Search stopped at `t_max` without a violation.
    pub reached_horizon: bool,
    /// `(t, max vertex xᵀPx)` for every grid time examined.
    pub diagnostics: Vec<(f64, f64)>,
}

/// Everything needed to recompute `T_UC`.
#[derive(Debug, Clone)]
pub struct ReachProblem<T: Scalar> {
    pub a: DMatrix<T>,
    pub b: DMatrix<T>,
    /// Admissible inputs during MC/SR, deviation coordinates.
    pub u: ControlPolytope<T>,
    pub p: DMatrix<T>,
    pub epsilon: T,
    pub t_sr: T,
    pub opts: ReachOptions,
}

/// Largest grid time `T_UC` with `R⁺(P_ε, t) ⊆ E_C` at every grid time in
/// `[0, T_UC]`.
pub fn find_t_uc<T: Scalar>(problem: &ReachProblem<T>) -> Result<TimingResult> {
    let opts = &problem.opts;
    if !(opts.grid_step > 0.0) || !(opts.t_max >= 0.0) {
        return Err(domain("reach", "grid_step must be positive and t_max nonnegative"));
    }
    let normals = box_normals(&problem.p, &problem.a, &problem.b, opts.normals)?;
    let init = bounding_polytope(&problem.p, problem.epsilon, &normals)?;
    let mut prop = ReachPropagator::new(&problem.a, &problem.b, &problem.u, &init, T::lit(opts.quad_step()))?;
    let v0 = prop.max_vertex_value(&problem.p)?;
    if v0 > T::one() {
        return Err(Error::InfeasibleAtZero { max_value: v0.as_f64() });
    }
    let mut diagnostics = vec![(0.0, v0.as_f64())];
    let mut t_uc = 0.0;
    let mut reached_horizon = true;
    let steps = (opts.t_max / opts.grid_step + 1e-9).floor() as usize;
    for k in 1..=steps {
        let t = k as f64 * opts.grid_step;
        prop.advance_to(T::lit(t))?;
        let v = prop.max_vertex_value(&problem.p)?;
        diagnostics.push((t, v.as_f64()));
        if v > T::one() {
            reached_horizon = false;
            break;
        }
        t_uc = t;
    }
    let t_sr = problem.t_sr.as_f64();
    Ok(TimingResult {
        t_uc,
        t_sr,
        epsilon: problem.epsilon.as_f64(),
        feasible: t_uc > t_sr,
        reached_horizon,
        diagnostics,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TuningStrategy {
    /// Shrink the inner safe set.
    #[serde(alias = "epsilon")]
    ShrinkEpsilon,
    /// Tighten the protected MC/SR input limits.
    #[serde(alias = "limits")]
    TightenLimits,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TuningSchedule {
    pub epsilon_factor: f64,
    pub limit_factor: f64,
    pub max_iter: usize,
}

impl Default for TuningSchedule {
    fn default() -> Self {
        Self { epsilon_factor: 0.5, limit_factor: 0.8, max_iter: 20 }
    }
}

/// One row of the tuning trade-off log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuningStep {
    pub iteration: usize,
    pub epsilon: f64,
    pub limits_lower: Vec<f64>,
    pub limits_upper: Vec<f64>,
    /// `None` when the initial polytope already leaves `E_C`.
    pub t_uc: Option<f64>,
    pub t_sc_bound: Option<f64>,
    pub feasible: bool,
}

#[derive(Debug, Clone)]
pub struct TuningOutcome<T: Scalar> {
    pub result: TimingResult,
    pub epsilon: T,
    pub limits: ControlPolytope<T>,
    pub log: Vec<TuningStep>,
}

/// Repeats the `T_UC` search while shrinking `ε` or the input box until
/// `T_UC > T_SR`. `gamma` (when known) is used to log `T̄_SC` per step.
pub fn tune_feasibility<T: Scalar>(
    problem: &ReachProblem<T>,
    gamma: Option<T>,
    strategy: TuningStrategy,
    schedule: &TuningSchedule,
) -> Result<TuningOutcome<T>> {
    let first = match find_t_uc(problem) {
        Ok(r) => Some(r),
        Err(Error::InfeasibleAtZero { .. }) => None,
        Err(e) => return Err(e),
    };
    if let Some(r) = &first {
        if r.feasible {
            return Ok(TuningOutcome { result: r.clone(), epsilon: problem.epsilon, limits: problem.u.clone(), log: vec![] });
        }
    }
    let t_sc = |eps: T| gamma.and_then(|g| crate::timing::safety_time_bound(g, eps).ok()).map(|v| v.as_f64());
    let mut current = problem.clone();
    let mut log = Vec::new();
    for iteration in 1..=schedule.max_iter {
        match strategy {
            TuningStrategy::ShrinkEpsilon => current.epsilon *= T::lit(schedule.epsilon_factor),
            TuningStrategy::TightenLimits => current.u = current.u.scaled(T::lit(schedule.limit_factor)),
        }
        let res = match find_t_uc(&current) {
            Ok(r) => Some(r),
            Err(Error::InfeasibleAtZero { .. }) => None,
            Err(e) => return Err(e),
        };
        let feasible = res.as_ref().is_some_and(|r| r.feasible);
        log.push(TuningStep {
            iteration,
            epsilon: current.epsilon.as_f64(),
            limits_lower: current.u.lower.iter().map(|v| v.as_f64()).collect(),
            limits_upper: current.u.upper.iter().map(|v| v.as_f64()).collect(),
            t_uc: res.as_ref().map(|r| r.t_uc),
            t_sc_bound: t_sc(current.epsilon),
            feasible,
        });
        if let (true, Some(result)) = (feasible, res) {
            return Ok(TuningOutcome { result, epsilon: current.epsilon, limits: current.u, log });
        }
    }
    Err(Error::TuningExhausted { log })
}

/// Samples a point uniformly from `{xᵀPx ≤ level}` given a unit-ball sample.
pub fn ellipsoid_point<T: Scalar>(p: &DMatrix<T>, level: T, unit_ball: &DVector<T>) -> Result<DVector<T>> {
    let q = spd_inverse(p)?;
    let l = cholesky_factor(&q)?;
    Ok(l * unit_ball * level.sqrt())
}

/// Semi-axis lengths of `{xᵀPx ≤ 1}`.
pub fn semi_axes<T: Scalar>(p: &DMatrix<T>) -> Vec<T> {
    sym_eigenvalues(p).iter().map(|l| T::one() / l.sqrt()).collect()
}
