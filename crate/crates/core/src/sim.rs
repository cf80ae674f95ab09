//! Closed-loop simulation of the rejuvenation cycle under attack, and the
//! Monte Carlo validation built on it.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ellipsoid::LinearPlant;
use crate::error::{Error, Result};
use crate::expm::matrix_exponential;
use crate::fsm::{
    apply_limits, begin_step, end_step, gate_communication, ControlSource, FsmState, Mode, RejuvenationConfig,
    SrInput, StepCounts,
};
use crate::pipeline::{build_system, CertificateReport, System};
use crate::quadrotor::{self, QuadrotorParams, QuadrotorState, WrenchCommand};
use crate::reach::{bounding_polytope, box_normals, ControlPolytope, HalfspaceSet, ReachPropagator};
use crate::scenario::{AttackKind, AttackSpec, Scenario};
use crate::timing::lyapunov_value;

/// A plant the simulator can drive. States are deviations from the
/// equilibrium; inputs are absolute.
pub trait PlantModel: Send + Sync {
    fn n(&self) -> usize;
    fn m(&self) -> usize;
    fn equilibrium_input(&self) -> DVector<f64>;
    /// Input that actually reaches the plant, and whether the actuators
    /// clipped it.
    fn actuate(&self, u: &DVector<f64>) -> (DVector<f64>, bool) {
        (u.clone(), false)
    }
    /// One step of length `dt` under a constant input. The flag reports a
    /// gimbal-lock warning.
    fn step(&self, x: &DVector<f64>, u: &DVector<f64>, dt: f64) -> Result<(DVector<f64>, bool)>;
    /// The turn-off attack input.
    fn off_input(&self) -> DVector<f64>;
}

/// Linear plant discretized exactly under zero-order hold.
#[derive(Debug, Clone)]
pub struct LinearModel {
    u_e: DVector<f64>,
    dt: f64,
    phi: DMatrix<f64>,
    gamma: DMatrix<f64>,
}

impl LinearModel {
    pub fn new(plant: &LinearPlant<f64>, dt: f64) -> Result<Self> {
        let (n, m) = (plant.n(), plant.m());
        let mut aug = DMatrix::zeros(n + m, n + m);
        aug.view_mut((0, 0), (n, n)).copy_from(&plant.a);
        aug.view_mut((0, n), (n, m)).copy_from(&plant.b);
        let e = matrix_exponential(&aug, dt)?;
        Ok(Self {
            u_e: plant.u_e.clone(),
            dt,
            phi: e.view((0, 0), (n, n)).into_owned(),
            gamma: e.view((0, n), (n, m)).into_owned(),
        })
    }
}

impl PlantModel for LinearModel {
    fn n(&self) -> usize {
        self.phi.nrows()
    }

    fn m(&self) -> usize {
        self.gamma.ncols()
    }

    fn equilibrium_input(&self) -> DVector<f64> {
        self.u_e.clone()
    }

    fn step(&self, x: &DVector<f64>, u: &DVector<f64>, dt: f64) -> Result<(DVector<f64>, bool)> {
        if (dt - self.dt).abs() > 1e-12 * self.dt {
            return Err(Error::Config(format!("model was discretized for dt = {}, got {dt}", self.dt)));
        }
        Ok((&self.phi * x + &self.gamma * (u - &self.u_e), false))
    }

    fn off_input(&self) -> DVector<f64> {
        DVector::zeros(self.m())
    }
}

/// Nonlinear quadrotor integrated with RK4; commands pass through the motor
/// mixer.
#[derive(Debug, Clone)]
pub struct QuadrotorModel {
    pub params: QuadrotorParams,
}

impl PlantModel for QuadrotorModel {
    fn n(&self) -> usize {
        quadrotor::STATE_DIM
    }

    fn m(&self) -> usize {
        quadrotor::INPUT_DIM
    }

    fn equilibrium_input(&self) -> DVector<f64> {
        self.params.hover_input()
    }

    fn actuate(&self, u: &DVector<f64>) -> (DVector<f64>, bool) {
        let cmd = quadrotor::mixer(&WrenchCommand::from_vector(u), &self.params);
        (quadrotor::wrench_from_thrusts(&cmd.thrusts, &self.params).to_vector(), cmd.saturated)
    }

    fn step(&self, x: &DVector<f64>, u: &DVector<f64>, dt: f64) -> Result<(DVector<f64>, bool)> {
        let s = QuadrotorState::from_vector(x);
        let w = WrenchCommand::from_vector(u);
        let warn = quadrotor::dynamics(&s, &w, &self.params).gimbal_lock;
        Ok((quadrotor::rk4_step(&s, &w, dt, &self.params)?.to_vector(), warn))
    }

    fn off_input(&self) -> DVector<f64> {
        quadrotor::turn_off_wrench(&self.params).to_vector()
    }
}

pub fn make_model(sys: &System, dt: f64) -> Result<Box<dyn PlantModel>> {
    Ok(match sys.quadrotor {
        Some(params) => Box::new(QuadrotorModel { params }),
        None => Box::new(LinearModel::new(&sys.plant, dt)?),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub t: f64,
    pub mode: Mode,
    pub x: Vec<f64>,
    /// Input applied to the plant over `[t, t + dt)`.
    pub u: Vec<f64>,
    /// An attack reached the plant during this step.
    pub attack: bool,
    /// `xᵀPx` at `t`.
    pub v: f64,
    /// Mode switches taking effect at `t`, `;`-separated, or
    /// `safety_violation`.
    pub event: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeInterval {
    pub mode: Mode,
    pub start: f64,
    pub end: f64,
    pub attacked: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationSummary {
    pub scenario: String,
    pub steps: u64,
    pub dt: f64,
    pub duration: f64,
    pub max_v: f64,
    /// First time `V` exceeded 1.
    pub violation_time: Option<f64>,
    pub sc_activations: usize,
    pub max_sc_duration: f64,
    pub sc_time: f64,
    pub attacked_steps: u64,
    pub actuator_saturation_steps: u64,
    pub gimbal_warnings: u64,
    pub mode_intervals: Vec<ModeInterval>,
    pub final_state: Vec<f64>,
}

impl SimulationSummary {
    pub fn violated(&self) -> bool {
        self.violation_time.is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationOutcome {
    pub rows: Vec<TraceRow>,
    pub summary: SimulationSummary,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimOptions {
    pub attacks: Vec<AttackSpec>,
    pub x0: DVector<f64>,
    pub seed: u64,
    pub duration: f64,
    /// Keep the per-step trace.
    pub record: bool,
}

impl SimOptions {
    pub fn from_scenario(scn: &Scenario, n: usize) -> Self {
        let x0 = scn
            .simulation
            .initial_state
            .as_ref()
            .map_or_else(|| DVector::zeros(n), |v| DVector::from_column_slice(v));
        Self {
            attacks: scn.attacks.clone(),
            x0,
            seed: scn.rejuvenation.seed,
            duration: scn.simulation.duration,
            record: true,
        }
    }
}

/// Per-step view handed to an observer.
#[derive(Debug, Clone, Copy)]
pub struct StepInfo<'a> {
    pub step: u64,
    pub t: f64,
    pub mode: Mode,
    /// Steps since the current MC window began; `None` outside MC/SR.
    pub since_mc_entry: Option<u64>,
    pub x: &'a DVector<f64>,
    pub v: f64,
}

/// Mission law `u = u_e − K_m [x − x_ref; ∫(pos − pos_ref)]`.
struct MissionLaw<'a> {
    k: &'a DMatrix<f64>,
    u_e: DVector<f64>,
    integral_states: usize,
}

impl MissionLaw<'_> {
    fn command(&self, x: &DVector<f64>, reference: &DVector<f64>, integral: &DVector<f64>) -> DVector<f64> {
        let n = x.len();
        let mut aug = DVector::zeros(n + self.integral_states);
        aug.rows_mut(0, n).copy_from(&(x - reference));
        aug.rows_mut(n, self.integral_states).copy_from(integral);
        &self.u_e - self.k * aug
    }

    fn accumulate(&self, integral: &mut DVector<f64>, x: &DVector<f64>, reference: &DVector<f64>, dt: f64) {
        for i in 0..self.integral_states {
            integral[i] += (x[i] - reference[i]) * dt;
        }
    }
}

fn takeover_reference(spec: &AttackSpec, n: usize) -> DVector<f64> {
    let mut r = DVector::zeros(n);
    if let Some(t) = &spec.target {
        for (i, v) in t.iter().enumerate().take(n) {
            r[i] = *v;
        }
    }
    r
}

pub fn rejuvenation_config(scn: &Scenario, cert: &CertificateReport, sys: &System) -> Result<RejuvenationConfig<f64>> {
    Ok(RejuvenationConfig {
        t_sr: cert.t_sr,
        t_r: cert.t_r,
        epsilon: cert.epsilon,
        mc_limits: cert.mc_polytope()?,
        sc_limits: sys.sc_limits.clone(),
        sr_input: scn.rejuvenation.sr_input,
    })
}

/// Runs one closed-loop simulation with the certified timing.
pub fn simulate(scn: &Scenario, cert: &CertificateReport) -> Result<SimulationOutcome> {
    let sys = build_system(scn)?;
    let opts = SimOptions::from_scenario(scn, sys.plant.n());
    simulate_with(scn, &sys, cert, &opts, &mut |_| {})
}

pub fn simulate_with(
    scn: &Scenario,
    sys: &System,
    cert: &CertificateReport,
    opts: &SimOptions,
    observer: &mut dyn FnMut(&StepInfo),
) -> Result<SimulationOutcome> {
    if !cert.feasible || !(cert.t_r > 0.0) {
        return Err(Error::Config("cannot simulate an infeasible certificate (t_r <= 0)".into()));
    }
    let dt = scn.simulation.dt;
    let cfg = rejuvenation_config(scn, cert, sys)?;
    let counts: StepCounts = cfg.validate(dt)?;
    let model = make_model(sys, dt)?;
    let n = model.n();
    if opts.x0.len() != n {
        return Err(Error::Config(format!("initial state has {} entries, expected {n}", opts.x0.len())));
    }
    let p = cert.p_matrix();
    let mission = MissionLaw { k: &sys.k_mission, u_e: model.equilibrium_input(), integral_states: sys.integral_states };
    let zero_ref = DVector::zeros(n);
    let steps = (opts.duration / dt).round() as u64;

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut x = opts.x0.clone();
    let mut fsm = FsmState::new();
    let mut integral = DVector::zeros(sys.integral_states);
    let mut atk_integral = DVector::zeros(sys.integral_states);
    let mut corner = mission.u_e.clone();
    let mut corner_left = 0u64;
    let mut was_effective = false;
    let mut last_mc_u = mission.u_e.clone();
    let mut mc_entry_step = 0u64;

    let mut rows = Vec::new();
    let mut effective_log = Vec::with_capacity(steps as usize);
    let mut max_v = 0.0f64;
    let mut violation_time = None;
    let (mut sat_steps, mut gimbal_warnings, mut attacked_steps) = (0u64, 0u64, 0u64);
    let mut u_app = mission.u_e.clone();
    let mut executed = 0u64;

    for k in 0..=steps {
        let t = k as f64 * dt;
        let v = lyapunov_value(&p, &x);
        max_v = max_v.max(v);
        if v > 1.0 {
            violation_time = Some(t);
            if opts.record {
                rows.push(TraceRow {
                    t,
                    mode: fsm.mode,
                    x: x.iter().copied().collect(),
                    u: u_app.iter().copied().collect(),
                    attack: false,
                    v,
                    event: "safety_violation".into(),
                });
            }
            break;
        }
        if k == steps {
            break;
        }

        let (mut mid, source) = begin_step(&fsm, &x, &p, cfg.epsilon, &counts, dt);
        let entered_mc = mid.mode_history.last().is_some_and(|e| e.step == k && e.to == Mode::MC);
        if entered_mc {
            integral.fill(0.0);
            mc_entry_step = k;
        }
        let attack = opts.attacks.iter().find(|a| a.active_at(t));
        let effective = gate_communication(&mid, attack.is_some());
        mid.latch_attack(effective);
        if effective && !was_effective {
            atk_integral.fill(0.0);
            corner_left = 0;
        }
        was_effective = effective;

        let attack_input = |a: &AttackSpec,
                            rng: &mut ChaCha8Rng,
                            atk_integral: &mut DVector<f64>,
                            corner: &mut DVector<f64>,
                            corner_left: &mut u64| match a.kind {
            AttackKind::TurnOff => model.off_input(),
            AttackKind::TakeOver => {
                let r = takeover_reference(a, n);
                let u = mission.command(&x, &r, atk_integral);
                mission.accumulate(atk_integral, &x, &r, dt);
                u
            }
            AttackKind::RandomBox => {
                if *corner_left == 0 {
                    *corner = random_corner(&cfg.mc_limits, rng);
                    *corner_left = a.hold_steps.max(1);
                }
                *corner_left -= 1;
                corner.clone()
            }
        };

        let u_cmd = match (source, attack.filter(|_| effective)) {
            (ControlSource::Safety, _) => &mission.u_e - &sys.k_safety * &x,
            (_, Some(a)) => attack_input(a, &mut rng, &mut atk_integral, &mut corner, &mut corner_left),
            (ControlSource::Mission, None) => {
                let u = mission.command(&x, &zero_ref, &integral);
                mission.accumulate(&mut integral, &x, &zero_ref, dt);
                u
            }
            (ControlSource::Uncertain, None) => match cfg.sr_input {
                SrInput::Hold => last_mc_u.clone(),
                SrInput::Equilibrium => mission.u_e.clone(),
            },
        };
        let limits = if mid.limits_enabled { &cfg.mc_limits } else { &cfg.sc_limits };
        let u_lim = apply_limits(&u_cmd, limits);
        if source == ControlSource::Mission {
            last_mc_u = u_lim.clone();
        }
        let (actuated, clipped) = model.actuate(&u_lim);
        u_app = apply_limits(&actuated, limits);
        sat_steps += clipped as u64;
        attacked_steps += effective as u64;
        effective_log.push(effective);

        observer(&StepInfo {
            step: k,
            t,
            mode: mid.mode,
            since_mc_entry: (mid.mode != Mode::SC).then(|| k - mc_entry_step),
            x: &x,
            v,
        });
        if opts.record {
            let event = mid
                .mode_history
                .iter()
                .rev()
                .take_while(|e| e.step == k)
                .collect::<Vec<_>>()
                .into_iter()
                .rev()
                .map(|e| format!("{}->{}", e.from, e.to))
                .collect::<Vec<_>>()
                .join(";");
            rows.push(TraceRow {
                t,
                mode: mid.mode,
                x: x.iter().copied().collect(),
                u: u_app.iter().copied().collect(),
                attack: effective,
                v,
                event,
            });
        }

        let (next_x, warn) = model.step(&x, &u_app, dt).map_err(|e| match e {
            Error::NonFinite { .. } => Error::NonFinite { t: t + dt },
            other => other,
        })?;
        if !next_x.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite { t: t + dt });
        }
        gimbal_warnings += warn as u64;
        x = next_x;
        fsm = end_step(mid, &counts, dt);
        executed = k + 1;
    }

    let end_t = violation_time.unwrap_or(executed as f64 * dt);
    let intervals = mode_intervals(&fsm, end_t, dt, &effective_log);
    let sc: Vec<&ModeInterval> = intervals.iter().filter(|i| i.mode == Mode::SC).collect();
    let summary = SimulationSummary {
        scenario: scn.name.clone(),
        steps: executed,
        dt,
        duration: end_t,
        max_v,
        violation_time,
        sc_activations: sc.iter().filter(|i| i.end > i.start).count(),
        max_sc_duration: sc.iter().map(|i| i.end - i.start).fold(0.0, f64::max),
        sc_time: sc.iter().map(|i| i.end - i.start).sum(),
        attacked_steps,
        actuator_saturation_steps: sat_steps,
        gimbal_warnings,
        mode_intervals: intervals,
        final_state: x.iter().copied().collect(),
    };
    Ok(SimulationOutcome { rows, summary })
}

fn random_corner(limits: &ControlPolytope<f64>, rng: &mut ChaCha8Rng) -> DVector<f64> {
    DVector::from_fn(limits.dim(), |i, _| if rng.random::<bool>() { limits.upper[i] } else { limits.lower[i] })
}

/// Splits `[0, end)` into mode intervals from the switch history.
fn mode_intervals(fsm: &FsmState, end: f64, dt: f64, effective: &[bool]) -> Vec<ModeInterval> {
    let mut out = Vec::new();
    let mut mode = Mode::SC;
    let mut start_step = 0u64;
    let end_step = (end / dt).round() as u64;
    let mut push = |mode: Mode, a: u64, b: u64| {
        let b = b.min(end_step);
        if b < a {
            return;
        }
        let attacked = effective[(a as usize).min(effective.len())..(b as usize).min(effective.len())]
            .iter()
            .any(|e| *e);
        out.push(ModeInterval { mode, start: a as f64 * dt, end: b as f64 * dt, attacked });
    };
    for e in &fsm.mode_history {
        if e.step > end_step {
            break;
        }
        push(mode, start_step, e.step);
        mode = e.to;
        start_step = e.step;
    }
    push(mode, start_step, end_step);
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub scenario: String,
    pub runs: usize,
    pub seed: u64,
    pub duration: f64,
    pub max_v: Option<f64>,
    pub max_v_run: Option<usize>,
    pub violations: usize,
    pub violating_runs: Vec<usize>,
    pub max_sc_duration: Option<f64>,
    pub t_sc_bound: f64,
    pub sc_within_bound: bool,
    /// MC/SR states checked against the reach tube at grid times up to `T_UC`.
    pub reach_checks: u64,
    pub reach_contained: u64,
    pub reach_containment_rate: Option<f64>,
    pub gimbal_warnings: u64,
}

#[derive(Debug, Clone)]
struct RunStats {
    max_v: f64,
    violated: bool,
    max_sc: f64,
    checks: u64,
    contained: u64,
    gimbal: u64,
}

/// Uniform sample from `{xᵀPx ≤ ε}`.
pub fn sample_inner_set(p: &DMatrix<f64>, epsilon: f64, rng: &mut impl Rng) -> Result<DVector<f64>> {
    let n = p.nrows();
    let l = p.clone().cholesky().ok_or_else(|| Error::Numerical("P is not positive definite".into()))?.l();
    let g = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let r = rng.random::<f64>().powf(1.0 / n as f64) * epsilon.sqrt();
    let w = g.normalize() * r;
    l.transpose()
        .solve_upper_triangular(&w)
        .ok_or_else(|| Error::Numerical("singular Cholesky factor".into()))
}

/// Reach tube from `E_ε` under the certified MC limits, one entry per grid
/// step up to `T_UC`.
pub fn reach_tube(sys: &System, cert: &CertificateReport, scn: &Scenario) -> Result<Vec<HalfspaceSet<f64>>> {
    let p = cert.p_matrix();
    let normals = box_normals(&p, &sys.plant.a, &sys.plant.b, cert.normals)?;
    let init = bounding_polytope(&p, cert.epsilon, &normals)?;
    let u = cert.mc_polytope()?.translated(&-&sys.plant.u_e);
    let opts = scn.reach_options();
    let mut prop = ReachPropagator::new(&sys.plant.a, &sys.plant.b, &u, &init, opts.quad_step())?;
    let count = (cert.t_uc / opts.grid_step + 1e-9).floor() as usize;
    let mut tube = Vec::with_capacity(count + 1);
    for k in 0..=count {
        prop.advance_to(k as f64 * opts.grid_step)?;
        tube.push(prop.snapshot()?.as_halfspaces()?);
    }
    Ok(tube)
}

/// Random-box attacks from random initial states in `E_ε`, one seed per run
/// (`seed + i`). Runs are independent and execute in parallel; the report
/// does not depend on the thread count.
pub fn monte_carlo_validate(
    scn: &Scenario,
    cert: &CertificateReport,
    runs: usize,
    seed: u64,
) -> Result<ValidationReport> {
    monte_carlo_validate_on(scn, &build_system(scn)?, cert, runs, seed)
}

pub fn monte_carlo_validate_on(
    scn: &Scenario,
    sys: &System,
    cert: &CertificateReport,
    runs: usize,
    seed: u64,
) -> Result<ValidationReport> {
    let duration = scn.validation.duration.unwrap_or(scn.simulation.duration);
    let dt = scn.simulation.dt;
    let grid_steps = (scn.rejuvenation.grid_step / dt).round().max(1.0) as u64;
    let tube = if runs > 0 { reach_tube(sys, cert, scn)? } else { Vec::new() };
    let p = cert.p_matrix();
    let max_hold = scn.validation.max_hold_steps.max(1) as f64;

    let stats = (0..runs)
        .into_par_iter()
        .map(|i| -> Result<RunStats> {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(i as u64));
            let x0 = sample_inner_set(&p, cert.epsilon, &mut rng)?;
            let hold = max_hold.powf(rng.random::<f64>()).round().max(1.0) as u64;
            let opts = SimOptions {
                attacks: vec![AttackSpec { kind: AttackKind::RandomBox, start: 0.0, end: None, target: None, hold_steps: hold }],
                x0,
                seed: rng.random(),
                duration,
                record: false,
            };
            let (mut checks, mut contained) = (0u64, 0u64);
            let mut observe = |s: &StepInfo| {
                if let Some(since) = s.since_mc_entry {
                    if since % grid_steps == 0 {
                        if let Some(set) = tube.get((since / grid_steps) as usize) {
                            checks += 1;
                            contained += set.contains(s.x) as u64;
                        }
                    }
                }
            };
            let out = simulate_with(scn, sys, cert, &opts, &mut observe)?;
            Ok(RunStats {
                max_v: out.summary.max_v,
                violated: out.summary.violated(),
                max_sc: out.summary.max_sc_duration,
                checks,
                contained,
                gimbal: out.summary.gimbal_warnings,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut report = ValidationReport {
        scenario: scn.name.clone(),
        runs,
        seed,
        duration,
        max_v: None,
        max_v_run: None,
        violations: 0,
        violating_runs: Vec::new(),
        max_sc_duration: None,
        t_sc_bound: cert.t_sc_bound,
        sc_within_bound: true,
        reach_checks: 0,
        reach_contained: 0,
        reach_containment_rate: None,
        gimbal_warnings: 0,
    };
    for (i, s) in stats.iter().enumerate() {
        if report.max_v.is_none_or(|m| s.max_v > m) {
            report.max_v = Some(s.max_v);
            report.max_v_run = Some(i);
        }
        if s.violated {
            report.violations += 1;
            report.violating_runs.push(i);
        }
        report.max_sc_duration = Some(report.max_sc_duration.map_or(s.max_sc, |m| m.max(s.max_sc)));
        report.reach_checks += s.checks;
        report.reach_contained += s.contained;
        report.gimbal_warnings += s.gimbal;
    }
    report.sc_within_bound = report.max_sc_duration.is_none_or(|d| d <= cert.t_sc_bound);
    if report.reach_checks > 0 {
        report.reach_containment_rate = Some(report.reach_contained as f64 / report.reach_checks as f64);
    }
    Ok(report)
}
