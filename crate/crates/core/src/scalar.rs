//! Floating-point abstraction the numerics are generic over.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive};

/// Scalar type for all funnel, integrator, and solver arithmetic.
///
/// Implemented for `f32` and `f64`. Tolerance defaults go through
/// [`Scalar::default_tolerance`] so single precision gets a target it can
/// actually reach.
pub trait Scalar:
    Float + FromPrimitive + Sum + Debug + Display + Default + Send + Sync + 'static
{
    /// Default absolute/relative tolerance for adaptive integration.
    fn default_tolerance() -> Self;

    /// Converts an `f64` constant; panics only if the type cannot represent
    /// any finite approximation (never for `f32`/`f64`).
    #[inline]
    fn of(value: f64) -> Self {
        Self::from_f64(value).expect("constant not representable in scalar type")
    }

    /// Lossy view of the value as `f64`, used for diagnostics and errors.
    #[inline]
    fn approx_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Scalar for f32 {
    fn default_tolerance() -> Self {
        1e-4
    }
}

impl Scalar for f64 {
    fn default_tolerance() -> Self {
        1e-8
    }
}
