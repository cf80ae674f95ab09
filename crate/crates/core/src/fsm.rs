//! Mode machine for periodic software refresh: MC → SR → SC → MC.
//!
//! Time is counted in whole simulation steps so mode durations are exact.
//! Timeouts of MC and SR take effect at the end of the step that exhausts
//! them; the SC exit test runs at the start of a step on the current state
//! and costs no time, so a refresh that ends inside `E_ε` goes straight back
//! to MC.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::reach::ControlPolytope;
use crate::scalar::Scalar;
use crate::timing::lyapunov_value;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Mode {
    /// Mission control, communication on.
    MC,
    /// Software refresh.
    SR,
    /// Safety control.
    SC,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::MC => "MC",
            Mode::SR => "SR",
            Mode::SC => "SC",
        }
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Plant input during SR when nobody is attacking.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SrInput {
    /// Keep applying the last MC command.
    #[default]
    Hold,
    /// Apply the equilibrium input (zero deviation).
    Equilibrium,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RejuvenationConfig<T: Scalar> {
    /// Refresh duration, s.
    pub t_sr: T,
    /// Refresh-clock period, i.e. MC duration, s.
    pub t_r: T,
    pub epsilon: T,
    /// Protected limits enforced during MC and SR.
    pub mc_limits: ControlPolytope<T>,
    /// Limits available to the safety controller.
    pub sc_limits: ControlPolytope<T>,
    pub sr_input: SrInput,
}

/// Mode durations in simulation steps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepCounts {
    pub mc: u64,
    pub sr: u64,
}

fn whole_steps<T: Scalar>(what: &str, span: T, dt: T) -> Result<u64> {
    let ratio = (span / dt).as_f64();
    let k = ratio.round();
    if !(k >= 1.0) || (ratio - k).abs() > 1e-6 * k.max(1.0) {
        return Err(Error::Config(format!(
            "{what} = {} s is not a positive whole multiple of dt = {} s",
            span.as_f64(),
            dt.as_f64()
        )));
    }
    Ok(k as u64)
}

impl<T: Scalar> RejuvenationConfig<T> {
    /// Checks the invariants and converts the durations into step counts.
    pub fn validate(&self, dt: T) -> Result<StepCounts> {
        if !(dt > T::zero()) {
            return Err(Error::Config("dt must be positive".into()));
        }
        if !(self.t_r > T::zero()) {
            return Err(Error::Config("t_r must be positive".into()));
        }
        if !(self.t_sr > T::zero()) {
            return Err(Error::Config("T_SR must be positive".into()));
        }
        if !(self.epsilon > T::zero() && self.epsilon < T::one()) {
            return Err(Error::Config("epsilon must lie in (0, 1)".into()));
        }
        if self.mc_limits.dim() != self.sc_limits.dim() {
            return Err(Error::Config("MC and SC limits have different input dimensions".into()));
        }
        if !self.mc_limits.is_subset_of(&self.sc_limits) {
            return Err(Error::Config("MC limits must lie inside the SC limits".into()));
        }
        Ok(StepCounts { mc: whole_steps("t_r", self.t_r, dt)?, sr: whole_steps("T_SR", self.t_sr, dt)? })
    }
}

/// Who computes the plant input for the current step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ControlSource {
    /// Mission controller (an attacker may override it when the gate allows).
    Mission,
    /// Refresh in progress; the input is frozen or attacker-chosen.
    Uncertain,
    /// Trusted safety feedback.
    Safety,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModeEvent {
    /// Time the new mode starts, s.
    pub t: f64,
    pub step: u64,
    pub from: Mode,
    pub to: Mode,
    /// `xᵀPx` when the decision was taken, if evaluated.
    pub v: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FsmState {
    pub mode: Mode,
    /// Time left in the current MC or SR window, s; zero in SC.
    pub refresh_clock_remaining: f64,
    pub comm_enabled: bool,
    pub limits_enabled: bool,
    /// Time spent in the current SC visit, s.
    pub sc_elapsed: f64,
    /// An attack got through during the current MC window and persists
    /// through the following refresh.
    pub attack_latched: bool,
    pub step: u64,
    pub steps_left: u64,
    pub mode_history: Vec<ModeEvent>,
}

impl FsmState {
    /// Power-on state: the trusted controller runs first and hands over to MC
    /// once the state is inside `E_ε`.
    pub fn new() -> Self {
        Self {
            mode: Mode::SC,
            refresh_clock_remaining: 0.0,
            comm_enabled: false,
            limits_enabled: false,
            sc_elapsed: 0.0,
            attack_latched: false,
            step: 0,
            steps_left: 0,
            mode_history: Vec::new(),
        }
    }

    fn enter(&mut self, to: Mode, t: f64, v: Option<f64>, counts: &StepCounts, dt: f64) {
        self.mode_history.push(ModeEvent { t, step: self.step, from: self.mode, to, v });
        self.mode = to;
        self.comm_enabled = to == Mode::MC;
        self.limits_enabled = to != Mode::SC;
        match to {
            Mode::MC => {
                self.steps_left = counts.mc;
                self.attack_latched = false;
            }
            Mode::SR => self.steps_left = counts.sr,
            Mode::SC => {
                self.steps_left = 0;
                self.sc_elapsed = 0.0;
                self.attack_latched = false;
            }
        }
        self.refresh_clock_remaining = self.steps_left as f64 * dt;
    }

    /// Remembers that the attacker acted during MC so the override persists
    /// through SR.
    pub fn latch_attack(&mut self, effective: bool) {
        if effective && self.mode == Mode::MC {
            self.attack_latched = true;
        }
    }
}

impl Default for FsmState {
    fn default() -> Self {
        Self::new()
    }
}

/// Advances the machine by one step of length `dt` starting from state `x`.
/// Returns the control source that owns this step; the returned `FsmState`
/// already reflects any timeout at the end of the step.
pub fn fsm_step<T: Scalar>(
    fsm: &FsmState,
    x: &DVector<T>,
    p: &nalgebra::DMatrix<T>,
    cfg: &RejuvenationConfig<T>,
    dt: T,
) -> Result<(FsmState, ControlSource)> {
    let counts = cfg.validate(dt)?;
    let (mid, source) = begin_step(fsm, x, p, cfg.epsilon, &counts, dt.as_f64());
    Ok((end_step(mid, &counts, dt.as_f64()), source))
}

/// First half of [`fsm_step`]: the zero-time SC exit test. The returned state
/// is the one in force during the step, which is what gating and latching
/// should look at.
pub fn begin_step<T: Scalar>(
    fsm: &FsmState,
    x: &DVector<T>,
    p: &nalgebra::DMatrix<T>,
    epsilon: T,
    counts: &StepCounts,
    dt: f64,
) -> (FsmState, ControlSource) {
    let mut next = fsm.clone();
    if next.mode == Mode::SC {
        let v = lyapunov_value(p, x);
        if v <= epsilon {
            next.enter(Mode::MC, fsm.step as f64 * dt, Some(v.as_f64()), counts, dt);
        }
    }
    let source = match next.mode {
        Mode::MC => ControlSource::Mission,
        Mode::SR => ControlSource::Uncertain,
        Mode::SC => ControlSource::Safety,
    };
    (next, source)
}

/// Second half of [`fsm_step`]: consumes the step and fires MC/SR timeouts.
pub fn end_step(mut next: FsmState, counts: &StepCounts, dt: f64) -> FsmState {
    match next.mode {
        Mode::MC | Mode::SR => next.steps_left = next.steps_left.saturating_sub(1),
        Mode::SC => next.sc_elapsed += dt,
    }
    next.step += 1;
    next.refresh_clock_remaining = next.steps_left as f64 * dt;

    if next.steps_left == 0 {
        let t_end = next.step as f64 * dt;
        match next.mode {
            Mode::MC => next.enter(Mode::SR, t_end, None, counts, dt),
            Mode::SR => next.enter(Mode::SC, t_end, None, counts, dt),
            Mode::SC => {}
        }
    }
    next
}

/// Componentwise clamp into the box.
pub fn apply_limits<T: Scalar>(u: &DVector<T>, limits: &ControlPolytope<T>) -> DVector<T> {
    limits.clamp(u)
}

/// Whether an active attack reaches the plant this step. The safety
/// controller runs isolated; during SR an attack that got in during the
/// preceding MC window keeps control.
pub fn gate_communication(fsm: &FsmState, attack_active: bool) -> bool {
    attack_active && (fsm.comm_enabled || (fsm.mode == Mode::SR && fsm.attack_latched))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    fn cfg(t_sr: f64, t_r: f64) -> RejuvenationConfig<f64> {
        RejuvenationConfig {
            t_sr,
            t_r,
            epsilon: 0.01,
            mc_limits: ControlPolytope::symmetric(&[0.5]).unwrap(),
            sc_limits: ControlPolytope::symmetric(&[1.0]).unwrap(),
            sr_input: SrInput::Hold,
        }
    }

    fn x(v: f64) -> DVector<f64> {
        DVector::from_vec(vec![v])
    }

    #[test]
    fn sc_exit_inside_inner_set() {
        let p = DMatrix::identity(1, 1);
        let c = cfg(0.1, 0.27);
        let (next, src) = fsm_step(&FsmState::new(), &x(0.005f64.sqrt()), &p, &c, 0.01).unwrap();
        assert_eq!(src, ControlSource::Mission);
        assert_eq!(next.mode, Mode::MC);
        assert!(next.comm_enabled && next.limits_enabled);
        assert_eq!(next.steps_left, 26);
        assert_eq!(next.mode_history[0].to, Mode::MC);
    }

    #[test]
    fn stays_in_sc_outside() {
        let p = DMatrix::identity(1, 1);
        let (next, src) = fsm_step(&FsmState::new(), &x(0.5), &p, &cfg(0.1, 0.27), 0.01).unwrap();
        assert_eq!(src, ControlSource::Safety);
        assert_eq!(next.mode, Mode::SC);
        assert!(!next.comm_enabled && !next.limits_enabled);
        assert!((next.sc_elapsed - 0.01).abs() < 1e-15);
    }

    #[test]
    fn mc_timeout_edge() {
        let p = DMatrix::identity(1, 1);
        let mut s = FsmState::new();
        s.mode = Mode::MC;
        s.comm_enabled = true;
        s.limits_enabled = true;
        s.steps_left = 1;
        s.refresh_clock_remaining = 0.01;
        let (next, src) = fsm_step(&s, &x(0.0), &p, &cfg(0.1, 0.27), 0.01).unwrap();
        assert_eq!(src, ControlSource::Mission);
        assert_eq!(next.mode, Mode::SR);
        assert!(!next.comm_enabled);
        assert!(next.limits_enabled);
    }

    #[test]
    fn full_cycle_period() {
        let p = DMatrix::identity(1, 1);
        let c = cfg(0.1, 0.27);
        let mut s = FsmState::new();
        for _ in 0..200 {
            s = fsm_step(&s, &x(0.0), &p, &c, 0.01).unwrap().0;
        }
        let mc_starts: Vec<f64> = s.mode_history.iter().filter(|e| e.to == Mode::MC).map(|e| e.t).collect();
        assert!(mc_starts.len() >= 5);
        for w in mc_starts.windows(2) {
            assert!((w[1] - w[0] - 0.37).abs() < 1e-9);
        }
        // SC is entered and left on the same decision step.
        for w in s.mode_history.windows(2) {
            if w[0].to == Mode::SC {
                assert_eq!(w[1].to, Mode::MC);
                assert_eq!(w[0].t, w[1].t);
            }
        }
    }

    #[test]
    fn config_validation() {
        let c = cfg(0.1, 0.27);
        assert_eq!(c.validate(0.01).unwrap(), StepCounts { mc: 27, sr: 10 });
        assert!(matches!(c.validate(0.04), Err(Error::Config(_))));
        assert!(cfg(0.1, 0.0).validate(0.01).is_err());
        let mut bad = cfg(0.1, 0.27);
        bad.mc_limits = ControlPolytope::symmetric(&[2.0]).unwrap();
        assert!(bad.validate(0.01).is_err());
        bad = cfg(0.1, 0.27);
        bad.epsilon = 1.0;
        assert!(bad.validate(0.01).is_err());
    }

    #[test]
    fn limits_clamp() {
        let torque = ControlPolytope::symmetric(&[0.0033]).unwrap();
        assert_eq!(apply_limits(&x(0.05), &torque)[0], 0.0033);
        assert_eq!(apply_limits(&x(0.001), &torque)[0], 0.001);
        let thrust = ControlPolytope::new(x(0.0), x(4.0)).unwrap();
        assert_eq!(apply_limits(&x(-1.0), &thrust)[0], 0.0);
    }

    #[test]
    fn gate() {
        let mut s = FsmState::new();
        assert!(!gate_communication(&s, true));
        s.mode = Mode::MC;
        s.comm_enabled = true;
        assert!(gate_communication(&s, true));
        assert!(!gate_communication(&s, false));
        s.latch_attack(true);
        s.mode = Mode::SR;
        s.comm_enabled = false;
        assert!(gate_communication(&s, true));
        s.attack_latched = false;
        assert!(!gate_communication(&s, true));
    }
}
