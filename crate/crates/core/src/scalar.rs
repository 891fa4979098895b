//! Scalar abstraction shared by the geometry and quadrature layers.

use std::fmt::Debug;

use num_traits::{Float, FloatConst, FromPrimitive, ToPrimitive};

/// Real floating point type usable by the generic kernels (`f32` or `f64`).
pub trait Scalar:
    Float + FloatConst + FromPrimitive + ToPrimitive + Debug + Default + Send + Sync + 'static
{
    /// Machine-precision scaled tolerance used for "exact" identities.
    const IDENTITY_TOL: f64;

    /// Converts an `f64` literal. Never fails for finite input.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("finite literal")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("finite scalar")
    }
}

impl Scalar for f32 {
    const IDENTITY_TOL: f64 = 1e-4;
}

impl Scalar for f64 {
    const IDENTITY_TOL: f64 = 1e-10;
}
