//! Scalar abstraction shared by the numerical kernels.

use std::fmt::{Debug, LowerExp};

use nalgebra::RealField;
use num_traits::{FromPrimitive, ToPrimitive};

/// Real floating-point scalar the synthesis and reachability kernels are
/// written against. Implemented for `f32` and `f64`.
pub trait Scalar: RealField + Copy + FromPrimitive + ToPrimitive + LowerExp + Debug {
    /// Converts an `f64` literal or parameter into this scalar type.
    fn lit(v: f64) -> Self {
        nalgebra::convert::<f64, Self>(v)
    }

    /// Widens to `f64` for reporting and serialization.
    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    /// Machine epsilon of the type.
    fn eps() -> Self {
        Self::default_epsilon()
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
