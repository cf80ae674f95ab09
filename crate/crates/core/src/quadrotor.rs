//! Nonlinear 12-state rigid-body quadrotor in "+" geometry, its hover
//! linearization, the motor mixer and the LQR-with-integral mission law.
//!
//! Frames: inertial z points up, body z along the thrust axis. State order is
//! `[x, y, z, φ, θ, ψ, vx, vy, vz, p, q, r]` with inertial-frame velocity and
//! body angular rates; inputs are `[F, τx, τy, τz]`.

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::ellipsoid::{LinearPlant, PolyhedralConstraints};
use crate::error::{domain, Error, Result};
use crate::lqr::{lqr, LqrSolution};
use crate::reach::ControlPolytope;

pub const STATE_DIM: usize = 12;
pub const INPUT_DIM: usize = 4;
/// Position-error integrators in the mission law.
pub const INTEGRAL_DIM: usize = 3;
const GIMBAL_MARGIN: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QuadrotorParams {
    /// kg
    pub mass: f64,
    /// Principal moments, kg·m².
    pub inertia: [f64; 3],
    /// Rotor distance from the center, m.
    pub arm_length: f64,
    /// m/s²
    pub gravity: f64,
    /// Per-motor thrust ceiling, N.
    pub motor_max_thrust: f64,
    /// Per-motor reaction torque at full thrust, N·m.
    pub motor_max_torque: f64,
}

impl Default for QuadrotorParams {
    fn default() -> Self {
        Self {
            mass: 1.0,
            inertia: [0.01, 0.01, 0.02],
            arm_length: 0.25,
            gravity: 9.81,
            motor_max_thrust: 4.0,
            motor_max_torque: 0.05,
        }
    }
}

impl QuadrotorParams {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.mass,
            self.inertia[0],
            self.inertia[1],
            self.inertia[2],
            self.arm_length,
            self.gravity,
            self.motor_max_thrust,
            self.motor_max_torque,
        ];
        if all.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(domain("quadrotor", "parameters must be finite and strictly positive"));
        }
        Ok(())
    }

    pub fn hover_thrust(&self) -> f64 {
        self.mass * self.gravity
    }

    /// Yaw reaction torque per newton of thrust.
    pub fn drag_coefficient(&self) -> f64 {
        self.motor_max_torque / self.motor_max_thrust
    }

    pub fn hover_input(&self) -> DVector<f64> {
        DVector::from_vec(vec![self.hover_thrust(), 0.0, 0.0, 0.0])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct QuadrotorState {
    pub position: Vector3<f64>,
    /// Roll, pitch, yaw.
    pub attitude: Vector3<f64>,
    pub velocity: Vector3<f64>,
    pub angular_rate: Vector3<f64>,
}

impl QuadrotorState {
    pub fn from_vector(x: &DVector<f64>) -> Self {
        let v = |i: usize| Vector3::new(x[i], x[i + 1], x[i + 2]);
        Self { position: v(0), attitude: v(3), velocity: v(6), angular_rate: v(9) }
    }

    pub fn to_vector(&self) -> DVector<f64> {
        let mut x = DVector::zeros(STATE_DIM);
        for k in 0..3 {
            x[k] = self.position[k];
            x[3 + k] = self.attitude[k];
            x[6 + k] = self.velocity[k];
            x[9 + k] = self.angular_rate[k];
        }
        x
    }

    fn axpy(&self, h: f64, d: &Self) -> Self {
        Self {
            position: self.position + d.position * h,
            attitude: self.attitude + d.attitude * h,
            velocity: self.velocity + d.velocity * h,
            angular_rate: self.angular_rate + d.angular_rate * h,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.to_vector().iter().all(|v| v.is_finite())
    }

    /// Translational plus rotational kinetic energy plus potential energy.
    pub fn mechanical_energy(&self, params: &QuadrotorParams) -> f64 {
        let inertia = Vector3::from(params.inertia);
        let rot: f64 = (0..3).map(|k| inertia[k] * self.angular_rate[k].powi(2)).sum();
        0.5 * params.mass * self.velocity.norm_squared() + 0.5 * rot + params.mass * params.gravity * self.position.z
    }
}

/// Total thrust and body torques.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct WrenchCommand {
    pub thrust: f64,
    pub torque: Vector3<f64>,
}

impl WrenchCommand {
    pub fn hover(params: &QuadrotorParams) -> Self {
        Self { thrust: params.hover_thrust(), torque: Vector3::zeros() }
    }

    pub fn from_vector(u: &DVector<f64>) -> Self {
        Self { thrust: u[0], torque: Vector3::new(u[1], u[2], u[3]) }
    }

    pub fn to_vector(&self) -> DVector<f64> {
        DVector::from_vec(vec![self.thrust, self.torque.x, self.torque.y, self.torque.z])
    }
}

fn rotation(att: &Vector3<f64>) -> Matrix3<f64> {
    let (sphi, cphi) = att.x.sin_cos();
    let (sth, cth) = att.y.sin_cos();
    let (spsi, cpsi) = att.z.sin_cos();
    // R = Rz(ψ) Ry(θ) Rx(φ), body → inertial.
    Matrix3::new(
        cth * cpsi,
        sphi * sth * cpsi - cphi * spsi,
        cphi * sth * cpsi + sphi * spsi,
        cth * spsi,
        sphi * sth * spsi + cphi * cpsi,
        cphi * sth * spsi - sphi * cpsi,
        -sth,
        sphi * cth,
        cphi * cth,
    )
}

/// Time derivative of the state; `gimbal_lock` is raised when `|θ|` gets
/// within 1e-3 rad of π/2.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Derivative {
    pub rate: QuadrotorState,
    pub gimbal_lock: bool,
}

pub fn dynamics(x: &QuadrotorState, w: &WrenchCommand, params: &QuadrotorParams) -> Derivative {
    let r = rotation(&x.attitude);
    let accel = r * Vector3::new(0.0, 0.0, w.thrust / params.mass) - Vector3::new(0.0, 0.0, params.gravity);

    let (sphi, cphi) = x.attitude.x.sin_cos();
    let (sth, cth) = x.attitude.y.sin_cos();
    let gimbal_lock = x.attitude.y.abs() > std::f64::consts::FRAC_PI_2 - GIMBAL_MARGIN;
    let om = x.angular_rate;
    let euler_rate = Vector3::new(
        om.x + (sphi * om.y + cphi * om.z) * sth / cth,
        cphi * om.y - sphi * om.z,
        (sphi * om.y + cphi * om.z) / cth,
    );

    let inertia = Vector3::from(params.inertia);
    let i_om = inertia.component_mul(&om);
    let ang_accel = (w.torque - om.cross(&i_om)).component_div(&inertia);

    Derivative {
        rate: QuadrotorState { position: x.velocity, attitude: euler_rate, velocity: accel, angular_rate: ang_accel },
        gimbal_lock,
    }
}

/// Classical fixed-step RK4.
pub fn rk4_step(x: &QuadrotorState, w: &WrenchCommand, dt: f64, params: &QuadrotorParams) -> Result<QuadrotorState> {
    if !(dt > 0.0) {
        return Err(domain("quadrotor", "dt must be positive"));
    }
    let k1 = dynamics(x, w, params).rate;
    let k2 = dynamics(&x.axpy(dt / 2.0, &k1), w, params).rate;
    let k3 = dynamics(&x.axpy(dt / 2.0, &k2), w, params).rate;
    let k4 = dynamics(&x.axpy(dt, &k3), w, params).rate;
    let mut sum = k1;
    sum = sum.axpy(2.0, &k2);
    sum = sum.axpy(2.0, &k3);
    sum = sum.axpy(1.0, &k4);
    let next = x.axpy(dt / 6.0, &sum);
    if !next.is_finite() {
        return Err(Error::NonFinite { t: f64::NAN });
    }
    Ok(next)
}

/// Jacobians at hover (`x = 0`, `F = mg`), as deviation dynamics.
pub fn linearize_hover(params: &QuadrotorParams) -> LinearPlant<f64> {
    let g = params.gravity;
    let mut a = DMatrix::zeros(STATE_DIM, STATE_DIM);
    for k in 0..3 {
        a[(k, 6 + k)] = 1.0;
        a[(3 + k, 9 + k)] = 1.0;
    }
    a[(6, 4)] = g;
    a[(7, 3)] = -g;
    let mut b = DMatrix::zeros(STATE_DIM, INPUT_DIM);
    b[(8, 0)] = 1.0 / params.mass;
    for k in 0..3 {
        b[(9 + k, 1 + k)] = 1.0 / params.inertia[k];
    }
    LinearPlant::with_equilibrium(a, b, DVector::zeros(STATE_DIM), params.hover_input())
        .expect("hover linearization has consistent shapes")
}

/// Symmetric state box of the hover scenario: vertical position ±5 m,
/// horizontal ±2 m, vertical speed ±5 m/s, horizontal ±2 m/s, every angle
/// ±π/4 and every rate ±5 rad/s.
pub fn hover_state_box() -> [f64; STATE_DIM] {
    let q = std::f64::consts::FRAC_PI_4;
    [2.0, 2.0, 5.0, q, q, q, 2.0, 2.0, 5.0, 5.0, 5.0, 5.0]
}

pub fn hover_constraints() -> PolyhedralConstraints<f64> {
    PolyhedralConstraints::symmetric_box(&hover_state_box()).expect("box half-widths are positive")
}

/// Motor thrusts ordered front (+x), left (+y), rear (−x), right (−y); front
/// and rear spin in the direction that yields positive yaw torque.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MotorCommand {
    pub thrusts: [f64; 4],
    /// At least one motor was clamped into `[0, motor_max_thrust]`.
    pub saturated: bool,
}

/// Wrench → motor thrusts, clamped to the motor range.
pub fn mixer(w: &WrenchCommand, params: &QuadrotorParams) -> MotorCommand {
    let raw = mixer_unclamped(w, params);
    let mut saturated = false;
    let thrusts = raw.map(|t| {
        let c = t.clamp(0.0, params.motor_max_thrust);
        saturated |= c != t;
        c
    });
    MotorCommand { thrusts, saturated }
}

pub fn mixer_unclamped(w: &WrenchCommand, params: &QuadrotorParams) -> [f64; 4] {
    let l = params.arm_length;
    let c = params.drag_coefficient();
    let f = w.thrust / 4.0;
    let (tx, ty, tz) = (w.torque.x / (2.0 * l), w.torque.y / (2.0 * l), w.torque.z / (4.0 * c));
    [f - ty + tz, f + tx - tz, f + ty + tz, f - tx - tz]
}

/// Motor thrusts → wrench.
pub fn wrench_from_thrusts(t: &[f64; 4], params: &QuadrotorParams) -> WrenchCommand {
    let l = params.arm_length;
    let c = params.drag_coefficient();
    WrenchCommand {
        thrust: t.iter().sum(),
        torque: Vector3::new(l * (t[1] - t[3]), l * (t[2] - t[0]), c * (t[0] - t[1] + t[2] - t[3])),
    }
}

/// Protected MC/SR limits: thrust over the full motor range, reduced torques.
pub fn protected_limits(params: &QuadrotorParams) -> ControlPolytope<f64> {
    let fmax = 4.0 * params.motor_max_thrust;
    ControlPolytope::new(
        DVector::from_vec(vec![0.0, -0.0033, -0.0033, -0.0005]),
        DVector::from_vec(vec![fmax, 0.0033, 0.0033, 0.0005]),
    )
    .expect("static limits are ordered")
}

/// Limits available to the safety controller.
pub fn safety_limits(params: &QuadrotorParams) -> ControlPolytope<f64> {
    let fmax = 4.0 * params.motor_max_thrust;
    let tmax = params.motor_max_torque;
    ControlPolytope::new(
        DVector::from_vec(vec![0.0, -tmax, -tmax, -tmax]),
        DVector::from_vec(vec![fmax, tmax, tmax, tmax]),
    )
    .expect("static limits are ordered")
}

/// Hover plant augmented with position-error integrators.
pub fn integral_augmented(plant: &LinearPlant<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = plant.n();
    let na = n + INTEGRAL_DIM;
    let mut a = DMatrix::zeros(na, na);
    a.view_mut((0, 0), (n, n)).copy_from(&plant.a);
    for k in 0..INTEGRAL_DIM {
        a[(n + k, k)] = 1.0;
    }
    let mut b = DMatrix::zeros(na, plant.m());
    b.view_mut((0, 0), (n, plant.m())).copy_from(&plant.b);
    (a, b)
}

/// LQR-with-integral mission gain from diagonal weights (15 state, 4 input).
pub fn mission_gain(plant: &LinearPlant<f64>, q_diag: &[f64], r_diag: &[f64]) -> Result<LqrSolution<f64>> {
    let (a, b) = integral_augmented(plant);
    if q_diag.len() != a.nrows() || r_diag.len() != b.ncols() {
        return Err(domain("quadrotor", "mission weight lengths must be 15 and 4"));
    }
    lqr(
        &a,
        &b,
        &DMatrix::from_diagonal(&DVector::from_column_slice(q_diag)),
        &DMatrix::from_diagonal(&DVector::from_column_slice(r_diag)),
    )
}

/// `u = u_hover − K_aug x_aug`.
pub fn lqr_integral_control(x_aug: &DVector<f64>, k_aug: &DMatrix<f64>, params: &QuadrotorParams) -> WrenchCommand {
    let u = params.hover_input() - k_aug * x_aug;
    WrenchCommand::from_vector(&u)
}

/// Override issued by an attacker that silences every propeller.
pub fn turn_off_wrench(params: &QuadrotorParams) -> WrenchCommand {
    wrench_from_thrusts(&[0.0; 4], params)
}
