//! Numerical toolkit for the spectral geometry of hyperbolic surfaces: geometry of
//! the upper half-plane, Fuchsian group enumeration, the Selberg transform pair,
//! disc-averaging propagators, pre-trace formula numerics and the quantum
//! ergodicity variance statistic.

pub mod cli;
pub mod error;
pub mod fuchsian;
pub mod geom;
pub mod interp;
pub mod propagator;
pub mod qe;
pub mod quad;
pub mod rng;
pub mod scalar;
pub mod selberg;
pub mod spectral_action;
pub mod trace;
pub(crate) mod tridiag;

pub use error::{HypError, Result};
pub use scalar::Scalar;

/// Double-precision point of the upper half-plane.
pub type Point = geom::Point<f64>;
/// Double-precision unit tangent vector.
pub type UnitTangent = geom::UnitTangent<f64>;
/// Double-precision element of PSL(2, ℝ).
pub type MobiusElement = geom::MobiusElement<f64>;
