//! Scalar abstraction for the numeric core.
//!
//! The probability and tabular-oracle layers are generic over [`Real`] so the
//! same code runs at `f32` or `f64`. Everything above them (networks, learner,
//! experiments) is pinned to `f64`; see the type aliases at the crate root.

use num_traits::{Float, FromPrimitive, ToPrimitive};
use std::fmt::{Debug, Display};

/// Floating-point scalar: `f32` or `f64`.
pub trait Real:
    Float + FromPrimitive + ToPrimitive + Debug + Display + Send + Sync + 'static
{
    /// Lossy conversion from `f64`, for constants and tolerances.
    fn of(v: f64) -> Self {
        Self::from_f64(v).expect("f64 constant representable in Real")
    }

    /// Conversion to `f64`, for diagnostics and error payloads.
    fn as_f64(self) -> f64 {
        self.to_f64().expect("Real representable as f64")
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// Smallest admissible Gaussian standard deviation.
pub const SIGMA_MIN: f64 = 1e-3;

/// Clamp range for the inverse temperature.
pub const ALPHA_MIN: f64 = 1e-4;
pub const ALPHA_MAX: f64 = 1e3;
