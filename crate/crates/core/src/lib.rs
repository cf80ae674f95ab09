pub mod ellipsoid;
pub mod error;
pub mod export;
pub mod expm;
pub mod fsm;
pub mod linalg;
pub mod lqr;
pub mod pipeline;
pub mod quadrotor;
pub mod reach;
pub mod scalar;
pub mod scenario;
pub mod sim;
pub mod timing;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Double-precision instances of the generic core types.
pub type Plant = ellipsoid::LinearPlant<f64>;
pub type Constraints = ellipsoid::PolyhedralConstraints<f64>;
pub type Ellipsoid = ellipsoid::InvariantEllipsoid<f64>;
pub type Polytope = reach::ControlPolytope<f64>;
pub type Halfspaces = reach::HalfspaceSet<f64>;
pub type Controller = timing::SafetyController<f64>;
pub type FsmConfig = fsm::RejuvenationConfig<f64>;
pub type Lqr = lqr::LqrSolution<f64>;
