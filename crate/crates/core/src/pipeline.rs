//! synthesize → bound → reach, producing a certificate for one scenario.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::ellipsoid::{
    check_saturation, closed_loop_matrix, synthesize_max_ellipsoid, verify_ellipsoid, LinearPlant,
    PolyhedralConstraints, VerificationReport,
};
use crate::error::{Error, Result};
use crate::lqr::lqr;
use crate::quadrotor::{self, QuadrotorParams, INTEGRAL_DIM};
use crate::reach::{find_t_uc, tune_feasibility, ControlPolytope, NormalChoice, ReachProblem, TimingResult, TuningStep, TuningStrategy};
use crate::scenario::{gain_matrix, matrix_rows, GainSource, LimitSpec, Scenario};
use crate::timing::{decay_rate, safety_time_bound};

pub const CERTIFICATE_SCHEMA: &str = "rejuv-certificate/1";

/// Everything the scenario resolves to before any certification.
#[derive(Debug, Clone)]
pub struct System {
    pub plant: LinearPlant<f64>,
    pub quadrotor: Option<QuadrotorParams>,
    /// Operating region including any input-saturation rows.
    pub constraints: PolyhedralConstraints<f64>,
    pub k_safety: DMatrix<f64>,
    /// `m × n`, or `m × (n + 3)` with position integrals on the quadrotor.
    pub k_mission: DMatrix<f64>,
    pub integral_states: usize,
    pub mc_limits: ControlPolytope<f64>,
    pub sc_limits: ControlPolytope<f64>,
}

fn diag(v: &[f64]) -> DMatrix<f64> {
    DMatrix::from_diagonal(&DVector::from_column_slice(v))
}

pub fn build_system(scn: &Scenario) -> Result<System> {
    scn.check()?;
    let plant = scn.linear_plant()?;
    let (n, m) = (plant.n(), plant.m());
    let quad = scn.quadrotor_params();
    let integral_states = if quad.is_some() { INTEGRAL_DIM } else { 0 };

    let k_safety = match gain_matrix(&scn.gains.safety, m, n, "gains.safety")? {
        Some(k) => k,
        None => match &scn.gains.safety {
            GainSource::Lqr { q, r } => lqr(&plant.a, &plant.b, &diag(q), &diag(r))?.k,
            GainSource::Matrix { .. } => unreachable!("explicit gains are returned above"),
        },
    };

    let k_mission = match &scn.gains.mission {
        None => {
            let mut k = DMatrix::zeros(m, n + integral_states);
            k.view_mut((0, 0), (m, n)).copy_from(&k_safety);
            k
        }
        Some(src) => match gain_matrix(src, m, n + integral_states, "gains.mission")? {
            Some(k) => k,
            None => match src {
                GainSource::Lqr { q, r } if quad.is_some() => quadrotor::mission_gain(&plant, q, r)?.k,
                GainSource::Lqr { q, r } => lqr(&plant.a, &plant.b, &diag(q), &diag(r))?.k,
                GainSource::Matrix { .. } => unreachable!("explicit gains are returned above"),
            },
        },
    };

    let mc_limits = scn.rejuvenation.mc_limits.to_polytope()?;
    let sc_limits = scn.rejuvenation.sc_limits.to_polytope()?;
    let mut constraints = scn.state_constraints(n)?;
    if scn.constraints.input_saturation() {
        constraints = constraints.with_input_bounds(&k_safety, &saturation_half_widths(&plant, &sc_limits)?)?;
    }
    Ok(System { plant, quadrotor: quad, constraints, k_safety, k_mission, integral_states, mc_limits, sc_limits })
}

/// Largest symmetric deviation around `u_e` allowed by the SC limits.
pub fn saturation_half_widths(plant: &LinearPlant<f64>, sc: &ControlPolytope<f64>) -> Result<Vec<f64>> {
    let w: Vec<f64> = (0..plant.m())
        .map(|i| (plant.u_e[i] - sc.lower[i]).min(sc.upper[i] - plant.u_e[i]))
        .collect();
    if w.iter().any(|v| !(*v > 0.0)) {
        return Err(Error::Config("the equilibrium input must lie strictly inside sc_limits".into()));
    }
    Ok(w)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuningReport {
    pub strategy: TuningStrategy,
    pub log: Vec<TuningStep>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificateReport {
    pub schema: String,
    pub scenario: String,
    pub n: usize,
    pub m: usize,
    pub k_safety: Vec<Vec<f64>>,
    pub a_sc: Vec<Vec<f64>>,
    pub max_real_part: f64,
    pub p: Vec<Vec<f64>>,
    pub q: Vec<Vec<f64>>,
    pub log_det_q: f64,
    pub num_constraints: usize,
    pub verification: VerificationReport,
    pub gamma: f64,
    pub epsilon: f64,
    pub t_sc_bound: f64,
    pub t_sr: f64,
    pub t_uc: f64,
    /// `T_UC − T_SR`.
    pub t_r: f64,
    pub feasible: bool,
    pub normals: NormalChoice,
    /// Absolute MC/SR limits that were certified (tightened when tuned).
    pub mc_limits: LimitSpec,
    pub sc_limits: LimitSpec,
    pub timing: TimingResult,
    pub tuning: Option<TuningReport>,
}

impl CertificateReport {
    pub fn p_matrix(&self) -> DMatrix<f64> {
        rows_to_matrix(&self.p)
    }

    pub fn q_matrix(&self) -> DMatrix<f64> {
        rows_to_matrix(&self.q)
    }

    pub fn mc_polytope(&self) -> Result<ControlPolytope<f64>> {
        self.mc_limits.to_polytope()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

pub fn rows_to_matrix(rows: &[Vec<f64>]) -> DMatrix<f64> {
    let c = rows.first().map_or(0, Vec::len);
    DMatrix::from_fn(rows.len(), c, |i, j| rows[i][j])
}

/// Runs the full certification. `tuning` overrides the scenario's tuning
/// strategy; without one an infeasible `T_UC` is reported, not repaired.
pub fn run_pipeline(scn: &Scenario, tuning: Option<TuningStrategy>) -> Result<CertificateReport> {
    let sys = build_system(scn)?;
    run_pipeline_on(scn, &sys, tuning)
}

pub fn run_pipeline_on(scn: &Scenario, sys: &System, tuning: Option<TuningStrategy>) -> Result<CertificateReport> {
    let cl = closed_loop_matrix(&sys.plant, &sys.k_safety)?;
    let ell = synthesize_max_ellipsoid(&cl.a_sc, &sys.constraints, &scn.solver)?;
    let mut verification = verify_ellipsoid(&ell.q, &cl.a_sc, &sys.constraints);
    verification.saturation = Some(check_saturation(
        &ell.q,
        &sys.k_safety,
        &saturation_half_widths(&sys.plant, &sys.sc_limits)?,
    ));
    let gamma = decay_rate(&cl.a_sc, &ell.p)?;
    let epsilon = scn.rejuvenation.epsilon;
    let t_sr = scn.rejuvenation.t_sr;

    let problem = ReachProblem {
        a: sys.plant.a.clone(),
        b: sys.plant.b.clone(),
        u: sys.mc_limits.translated(&-&sys.plant.u_e),
        p: ell.p.clone(),
        epsilon,
        t_sr,
        opts: scn.reach_options(),
    };
    let strategy = tuning.or(scn.tuning.strategy);
    let (timing, epsilon, u_dev, tuning) = match strategy {
        None => (find_t_uc(&problem)?, epsilon, problem.u.clone(), None),
        Some(s) => {
            let out = tune_feasibility(&problem, Some(gamma), s, &scn.tuning.schedule)?;
            (out.result, out.epsilon, out.limits, Some(TuningReport { strategy: s, log: out.log }))
        }
    };
    let mc_limits = u_dev.translated(&sys.plant.u_e);
    let t_sc_bound = safety_time_bound(gamma, epsilon)?;
    log::info!(
        "{}: gamma {gamma:.4e}, T_SC <= {t_sc_bound:.4} s, T_UC = {:.2} s ({})",
        scn.name,
        timing.t_uc,
        if timing.feasible { "feasible" } else { "infeasible" }
    );

    Ok(CertificateReport {
        schema: CERTIFICATE_SCHEMA.into(),
        scenario: scn.name.clone(),
        n: sys.plant.n(),
        m: sys.plant.m(),
        k_safety: matrix_rows(&sys.k_safety),
        a_sc: matrix_rows(&cl.a_sc),
        max_real_part: cl.max_real_part,
        p: matrix_rows(&ell.p),
        q: matrix_rows(&ell.q),
        log_det_q: ell.log_volume,
        num_constraints: sys.constraints.len(),
        verification,
        gamma,
        epsilon,
        t_sc_bound,
        t_sr,
        t_uc: timing.t_uc,
        t_r: timing.t_uc - t_sr,
        feasible: timing.feasible,
        normals: problem.opts.normals,
        mc_limits: LimitSpec::from_polytope(&mc_limits),
        sc_limits: LimitSpec::from_polytope(&sys.sc_limits),
        timing,
        tuning,
    })
}
