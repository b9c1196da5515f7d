//! Control-to-state information capacity of linear stochastic systems with a
//! single input delay, driven by mixed standard and fractional Brownian
//! motion.
//!
//! The pipeline is:
//!
//! 1. [`model`] — system description `dx = Ax dt + B1 u(t) dt + B2 u(t-h) dt
//!    + G dW + σ1 dW^{H1}`, output `y = Dx + σ2 W^{H2}`, validation and the
//!    Kalman-style controllability test for the delayed pair `(B1, B2)`.
//! 2. [`covariances`] — controllability Gramians split at `T-h`, white-noise
//!    and fractional-noise state covariances, and the total uncontrolled
//!    noise covariance `S_Total(T)`.
//! 3. [`allocator`] — two-budget water-filling over the Gramian eigenmodes,
//!    capacity in nats, segment mutual informations and the optimal control
//!    basis.
//! 4. [`asymptotics`] — infinite-horizon limits via Lyapunov equations
//!    (stable and unstable spectra) and the small-horizon linear law.
//! 5. [`simkit`] — an independent Euler–Maruyama Monte-Carlo oracle with
//!    exact fractional-Gaussian-noise increments, used to validate every
//!    analytic covariance and the capacity value itself.
//!
//! All numerics are generic over the scalar type through [`Real`]; `f64` is
//! the default and the type the shipped tolerances are calibrated for.

use nalgebra::RealField;
use num_traits::{FromPrimitive, ToPrimitive};

pub mod allocator;
pub mod asymptotics;
pub mod covariances;
pub mod fbm;
pub mod matcore;
pub mod model;
pub mod quad;
pub mod simkit;

/// Scalar type the whole crate is generic over: `f32` or `f64`.
pub trait Real: RealField + FromPrimitive + ToPrimitive + Copy + Send + Sync {}
impl<S> Real for S where S: RealField + FromPrimitive + ToPrimitive + Copy + Send + Sync {}

/// Shorthand for converting an `f64` constant into the working scalar type.
#[inline]
pub fn real<T: Real>(x: f64) -> T {
    T::from_f64(x).expect("constant representable in scalar type")
}

pub use nalgebra::{DMatrix, DVector};

/// Concrete double-precision aliases for the main entry points.
pub type Matrix64 = DMatrix<f64>;
pub type Vector64 = DVector<f64>;
pub type SystemSpec64 = model::SystemSpec<f64>;
pub type PowerBudget64 = model::PowerBudget<f64>;

/// Single-precision aliases, mainly useful for quick sweeps where the
/// shipped tolerances do not apply.
pub type Matrix32 = DMatrix<f32>;
pub type Vector32 = DVector<f32>;
pub type SystemSpec32 = model::SystemSpec<f32>;
