use thiserror::Error;

/// Errors raised by the rejuvenation toolkit. Every variant names the module
/// it originates from in its message so pipeline failures are attributable.
#[derive(Debug, Error)]
pub enum Error {
    #[error("ellipsoid: closed-loop matrix is not Hurwitz (max real part {max_real_part:e})")]
    NotHurwitz { max_real_part: f64 },

    #[error("ellipsoid: det-max barrier did not converge after {iterations} Newton steps (gap bound {gap:e})")]
    SolverFailure {
        iterations: usize,
        gap: f64,
        /// Last strictly feasible iterate, column-major, if one exists.
        last_feasible: Option<Vec<f64>>,
    },

    #[error("ellipsoid: constraints are degenerate for the Lyapunov fallback")]
    DegenerateConstraints,

    #[error("timing: P is not a Lyapunov certificate (min eigenvalue of W is {min_eig:e})")]
    NotCertificate { min_eig: f64 },

    #[error("{module}: argument out of domain: {message}")]
    Domain { module: &'static str, message: String },

    #[error("{module}: dimension mismatch: {message}")]
    Dimension { module: &'static str, message: String },

    #[error("reach: matrix exponential argument norm {norm:e} exceeds cap {cap:e}")]
    Overflow { norm: f64, cap: f64 },

    #[error("reach: normal set does not positively span the state space")]
    UnboundedPolytope,

    #[error("reach: quadrature disagreement {disagreement:e} exceeds tolerance on face {face} at t = {t}")]
    Quadrature { face: usize, t: f64, disagreement: f64 },

    #[error("reach: initial bounding polytope is not contained in the safe ellipsoid (max vertex value {max_value})")]
    InfeasibleAtZero { max_value: f64 },

    #[error("reach: feasibility tuning exhausted after {} steps", log.len())]
    TuningExhausted { log: Vec<crate::reach::TuningStep> },

    #[error("linalg: {0}")]
    Numerical(String),

    #[error("config: {0}")]
    Config(String),

    #[error("sim: non-finite state at t = {t}")]
    NonFinite { t: f64 },

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn domain(module: &'static str, message: impl Into<String>) -> Error {
    Error::Domain { module, message: message.into() }
}

pub(crate) fn dimension(module: &'static str, message: impl Into<String>) -> Error {
    Error::Dimension { module, message: message.into() }
}
