//! Declarative scenario files (JSON with a versioned `schema` field).

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::ellipsoid::{LinearPlant, PolyhedralConstraints, SolverOptions};
use crate::error::{Error, Result};
use crate::fsm::SrInput;
use crate::quadrotor::{self, QuadrotorParams};
use crate::reach::{ControlPolytope, NormalChoice, ReachOptions, TuningSchedule, TuningStrategy};

pub const SCENARIO_SCHEMA: &str = "rejuv-scenario/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub schema: String,
    pub name: String,
    #[serde(default)]
    pub description: String,
    pub plant: PlantSpec,
    pub constraints: ConstraintSpec,
    pub gains: GainSpec,
    pub rejuvenation: RejuvenationSpec,
    #[serde(default)]
    pub attacks: Vec<AttackSpec>,
    pub simulation: SimulationSpec,
    #[serde(default)]
    pub solver: SolverOptions,
    #[serde(default)]
    pub reach: ReachSpec,
    #[serde(default)]
    pub tuning: TuningSpec,
    #[serde(default)]
    pub validation: ValidationSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PlantSpec {
    /// Built-in rigid-body quadrotor linearized at hover.
    Quadrotor {
        #[serde(default)]
        params: QuadrotorParams,
    },
    /// `ẋ = Ax + B(u − u_e)` given row by row.
    Linear {
        a: Vec<Vec<f64>>,
        b: Vec<Vec<f64>>,
        #[serde(default)]
        u_e: Option<Vec<f64>>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HalfspaceRow {
    pub a: Vec<f64>,
    pub b: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ConstraintSpec {
    /// `aᵀx ≤ b` rows with `b > 0`.
    Halfspaces {
        rows: Vec<HalfspaceRow>,
        #[serde(default)]
        input_saturation: bool,
    },
    /// `|x_k| ≤ h_k`.
    Box {
        half_widths: Vec<f64>,
        #[serde(default)]
        input_saturation: bool,
    },
    /// The hover operating box of the quadrotor (24 faces).
    QuadrotorBox {
        #[serde(default)]
        input_saturation: bool,
    },
}

impl ConstraintSpec {
    /// Whether rows keeping the safety feedback unsaturated are appended.
    pub fn input_saturation(&self) -> bool {
        match self {
            ConstraintSpec::Halfspaces { input_saturation, .. }
            | ConstraintSpec::Box { input_saturation, .. }
            | ConstraintSpec::QuadrotorBox { input_saturation } => *input_saturation,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GainSource {
    /// Gain rows given explicitly.
    Matrix { k: Vec<Vec<f64>> },
    /// LQR from diagonal weights.
    Lqr { q: Vec<f64>, r: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GainSpec {
    pub safety: GainSource,
    /// Defaults to the safety gain. On the quadrotor the mission gain acts on
    /// the state augmented with three position-error integrals.
    #[serde(default)]
    pub mission: Option<GainSource>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LimitSpec {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl LimitSpec {
    pub fn to_polytope(&self) -> Result<ControlPolytope<f64>> {
        ControlPolytope::new(DVector::from_column_slice(&self.lower), DVector::from_column_slice(&self.upper))
            .map_err(|e| Error::Config(format!("limits: {e}")))
    }

    pub fn from_polytope(u: &ControlPolytope<f64>) -> Self {
        Self { lower: u.lower.iter().copied().collect(), upper: u.upper.iter().copied().collect() }
    }
}

fn default_grid_step() -> f64 {
    0.01
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RejuvenationSpec {
    pub t_sr: f64,
    pub epsilon: f64,
    /// Absolute input limits during MC and SR.
    pub mc_limits: LimitSpec,
    /// Absolute input limits during SC.
    pub sc_limits: LimitSpec,
    #[serde(default = "default_grid_step")]
    pub grid_step: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub sr_input: SrInput,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackKind {
    /// All motors off (zero absolute input on a linear plant).
    TurnOff,
    /// Mission law steered to another equilibrium.
    TakeOver,
    /// A random corner of the protected box every `hold_steps` steps.
    RandomBox,
}

impl AttackKind {
    pub fn as_str(self) -> &'static str {
        match self {
            AttackKind::TurnOff => "turn_off",
            AttackKind::TakeOver => "take_over",
            AttackKind::RandomBox => "random_box",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        match name.replace('-', "_").as_str() {
            "turn_off" => Some(AttackKind::TurnOff),
            "take_over" => Some(AttackKind::TakeOver),
            "random_box" => Some(AttackKind::RandomBox),
            _ => None,
        }
    }
}

fn one() -> u64 {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackSpec {
    pub kind: AttackKind,
    /// Activation time, s.
    pub start: f64,
    /// Deactivation time, s; open-ended when absent.
    #[serde(default)]
    pub end: Option<f64>,
    /// Take-over target: a position offset on the quadrotor (3 entries) or a
    /// full deviation state on a linear plant.
    #[serde(default)]
    pub target: Option<Vec<f64>>,
    #[serde(default = "one")]
    pub hold_steps: u64,
}

impl AttackSpec {
    pub fn active_at(&self, t: f64) -> bool {
        t >= self.start && self.end.is_none_or(|e| t < e)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationSpec {
    pub dt: f64,
    pub duration: f64,
    /// Deviation from the equilibrium; zeros when absent.
    #[serde(default)]
    pub initial_state: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReachSpec {
    pub t_max: Option<f64>,
    pub quad_step: Option<f64>,
    pub normals: NormalChoice,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TuningSpec {
    /// Tune automatically during `certify` when set.
    pub strategy: Option<TuningStrategy>,
    pub schedule: TuningSchedule,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ValidationSpec {
    /// Length of each Monte Carlo run, s; the simulation duration when absent.
    pub duration: Option<f64>,
    /// Random-box corners are held for a random number of steps drawn
    /// log-uniformly from `[1, max_hold_steps]`.
    pub max_hold_steps: u64,
}

impl Default for ValidationSpec {
    fn default() -> Self {
        Self { duration: None, max_hold_steps: 50 }
    }
}

fn matrix(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>> {
    let r = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    if r == 0 || c == 0 || rows.iter().any(|row| row.len() != c) {
        return Err(Error::Config(format!("{what} must be a non-empty rectangular matrix")));
    }
    Ok(DMatrix::from_fn(r, c, |i, j| rows[i][j]))
}

pub fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self> {
        let scn: Scenario = serde_json::from_str(text).map_err(|e| Error::Config(format!("scenario: {e}")))?;
        scn.check()?;
        Ok(scn)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read scenario {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Schema and cross-reference validation beyond what parsing enforces.
    pub fn check(&self) -> Result<()> {
        if self.schema != SCENARIO_SCHEMA {
            return Err(Error::Config(format!(
                "unsupported schema {:?}, expected {SCENARIO_SCHEMA:?}",
                self.schema
            )));
        }
        let plant = self.linear_plant()?;
        let (n, m) = (plant.n(), plant.m());
        self.state_constraints(n)?;
        let mc = self.rejuvenation.mc_limits.to_polytope()?;
        let sc = self.rejuvenation.sc_limits.to_polytope()?;
        if mc.dim() != m || sc.dim() != m {
            return Err(Error::Config(format!("limits must have {m} entries")));
        }
        if !mc.is_subset_of(&sc) {
            return Err(Error::Config("mc_limits must lie inside sc_limits".into()));
        }
        if !mc.contains(&plant.u_e) {
            return Err(Error::Config("the equilibrium input must satisfy mc_limits".into()));
        }
        let r = &self.rejuvenation;
        if !(r.t_sr > 0.0) || !(r.epsilon > 0.0 && r.epsilon < 1.0) || !(r.grid_step > 0.0) {
            return Err(Error::Config("need t_sr > 0, 0 < epsilon < 1 and grid_step > 0".into()));
        }
        let s = &self.simulation;
        if !(s.dt > 0.0) || !(s.duration >= 0.0) {
            return Err(Error::Config("need dt > 0 and duration >= 0".into()));
        }
        let k = (r.t_sr / s.dt).round();
        if k < 1.0 || (r.t_sr / s.dt - k).abs() > 1e-6 * k {
            return Err(Error::Config("dt must divide t_sr".into()));
        }
        let kg = (r.grid_step / s.dt).round();
        if kg < 1.0 || (r.grid_step / s.dt - kg).abs() > 1e-6 * kg {
            return Err(Error::Config("dt must divide the reach grid step so t_r is a whole number of steps".into()));
        }
        if let Some(x0) = &s.initial_state {
            if x0.len() != n {
                return Err(Error::Config(format!("initial_state must have {n} entries")));
            }
        }
        for a in &self.attacks {
            if !(a.start.is_finite()) || a.end.is_some_and(|e| !(e > a.start)) || a.hold_steps == 0 {
                return Err(Error::Config("attack windows need finite start < end and hold_steps >= 1".into()));
            }
            if a.kind == AttackKind::TakeOver {
                let want = if self.is_quadrotor() { 3 } else { n };
                if a.target.as_ref().map(Vec::len) != Some(want) {
                    return Err(Error::Config(format!("take_over needs a target with {want} entries")));
                }
            }
        }
        Ok(())
    }

    pub fn is_quadrotor(&self) -> bool {
        matches!(self.plant, PlantSpec::Quadrotor { .. })
    }

    pub fn quadrotor_params(&self) -> Option<QuadrotorParams> {
        match &self.plant {
            PlantSpec::Quadrotor { params } => Some(*params),
            PlantSpec::Linear { .. } => None,
        }
    }

    pub fn linear_plant(&self) -> Result<LinearPlant<f64>> {
        match &self.plant {
            PlantSpec::Quadrotor { params } => {
                params.validate().map_err(|e| Error::Config(e.to_string()))?;
                Ok(quadrotor::linearize_hover(params))
            }
            PlantSpec::Linear { a, b, u_e } => {
                let a = matrix(a, "plant.a")?;
                let b = matrix(b, "plant.b")?;
                let u_e = u_e.clone().unwrap_or_else(|| vec![0.0; b.ncols()]);
                LinearPlant::with_equilibrium(
                    a.clone(),
                    b,
                    DVector::zeros(a.nrows()),
                    DVector::from_vec(u_e),
                )
                .map_err(|e| Error::Config(e.to_string()))
            }
        }
    }

    /// The operating region without the input-saturation rows.
    pub fn state_constraints(&self, n: usize) -> Result<PolyhedralConstraints<f64>> {
        let c = match &self.constraints {
            ConstraintSpec::Halfspaces { rows, .. } => {
                let rows: Vec<_> = rows.iter().map(|r| (DVector::from_column_slice(&r.a), r.b)).collect();
                PolyhedralConstraints::from_halfspaces(&rows)
            }
            ConstraintSpec::Box { half_widths, .. } => PolyhedralConstraints::symmetric_box(half_widths),
            ConstraintSpec::QuadrotorBox { .. } => {
                if !self.is_quadrotor() {
                    return Err(Error::Config("quadrotor_box constraints need the quadrotor plant".into()));
                }
                Ok(quadrotor::hover_constraints())
            }
        }
        .map_err(|e| Error::Config(format!("constraints: {e}")))?;
        if c.dim() != n {
            return Err(Error::Config(format!("constraints live in R^{}, plant has {n} states", c.dim())));
        }
        Ok(c)
    }

    pub fn reach_options(&self) -> ReachOptions {
        let d = ReachOptions::default();
        ReachOptions {
            grid_step: self.rejuvenation.grid_step,
            t_max: self.reach.t_max.unwrap_or(d.t_max),
            quad_step: self.reach.quad_step,
            normals: self.reach.normals,
        }
    }
}

pub(crate) fn gain_matrix(src: &GainSource, rows: usize, cols: usize, what: &str) -> Result<Option<DMatrix<f64>>> {
    match src {
        GainSource::Matrix { k } => {
            let k = matrix(k, what)?;
            if k.shape() != (rows, cols) {
                return Err(Error::Config(format!("{what} must be {rows}x{cols}")));
            }
            Ok(Some(k))
        }
        GainSource::Lqr { q, r } => {
            if q.len() != cols || r.len() != rows {
                return Err(Error::Config(format!("{what} LQR weights need {cols} state and {rows} input entries")));
            }
            Ok(None)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const INTEGRATOR: &str = r#"{
        "schema": "rejuv-scenario/1",
        "name": "integrator",
        "plant": {"kind": "linear", "a": [[0.0]], "b": [[1.0]]},
        "constraints": {"kind": "box", "half_widths": [1.0]},
        "gains": {"safety": {"kind": "matrix", "k": [[1.0]]}},
        "rejuvenation": {
            "t_sr": 0.1, "epsilon": 0.01,
            "mc_limits": {"lower": [-1.0], "upper": [1.0]},
            "sc_limits": {"lower": [-1.0], "upper": [1.0]}
        },
        "simulation": {"dt": 0.01, "duration": 2.0}
    }"#;

    #[test]
    fn parses_minimal() {
        let s = Scenario::from_json(INTEGRATOR).unwrap();
        assert_eq!(s.rejuvenation.grid_step, 0.01);
        assert_eq!(s.linear_plant().unwrap().n(), 1);
        assert!(s.attacks.is_empty());
        let back = Scenario::from_json(&s.to_json().unwrap()).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn rejects_bad_schema_and_fields() {
        let bad = INTEGRATOR.replace("rejuv-scenario/1", "rejuv-scenario/0");
        assert!(matches!(Scenario::from_json(&bad), Err(Error::Config(_))));
        let extra = INTEGRATOR.replace("\"name\"", "\"bogus\": 1, \"name\"");
        assert!(Scenario::from_json(&extra).is_err());
    }

    #[test]
    fn rejects_dt_mismatch() {
        let bad = INTEGRATOR.replace("\"dt\": 0.01", "\"dt\": 0.03");
        assert!(matches!(Scenario::from_json(&bad), Err(Error::Config(_))));
    }

    #[test]
    fn rejects_loose_mc_limits() {
        let bad = INTEGRATOR.replace("\"mc_limits\": {\"lower\": [-1.0], \"upper\": [1.0]}", "\"mc_limits\": {\"lower\": [-2.0], \"upper\": [1.0]}");
        assert!(Scenario::from_json(&bad).is_err());
    }

    #[test]
    fn attack_window() {
        let a = AttackSpec { kind: AttackKind::TurnOff, start: 1.0, end: Some(2.0), target: None, hold_steps: 1 };
        assert!(!a.active_at(0.5));
        assert!(a.active_at(1.0));
        assert!(!a.active_at(2.0));
        assert_eq!(AttackKind::parse("take-over"), Some(AttackKind::TakeOver));
    }
}
