//! Floating-point scalar abstraction shared by all of the numeric modules.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign};

/// Real scalar used for setpoints, objective values and weights.
///
/// Implemented for `f32` and `f64`. Serialized interfaces (scenario files,
/// wire messages, CSV outputs) always carry `f64`; values cross that boundary
/// through [`Scalar::of`] and [`Scalar::to_f64_lossy`].
pub trait Scalar:
    Float + FromPrimitive + NumAssign + Sum + Debug + Display + Default + Send + Sync + 'static
{
    /// Converts an `f64` literal or config value into this scalar type.
    fn of(value: f64) -> Self {
        Self::from_f64(value).unwrap_or_else(Self::nan)
    }

    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
