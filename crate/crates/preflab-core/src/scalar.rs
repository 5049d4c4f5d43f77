//! Scalar abstraction for the numeric core.
//!
//! Everything downstream (autodiff, model, losses, optimizer) is generic
//! over [`Real`]; the crate root pins `f64` aliases for the artifact's
//! default precision.

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

/// Floating-point scalar usable throughout the numeric core.
pub trait Real:
    Float + NumAssign + FromPrimitive + ToPrimitive + std::fmt::Debug + std::fmt::Display + 'static
{
    /// Lossless-enough conversion from `f64` for constants and config values.
    fn from_f64_c(x: f64) -> Self {
        Self::from_f64(x).expect("f64 constant not representable")
    }

    /// Widening conversion used at I/O boundaries (checkpoints, CSV, JSON).
    fn as_f64(self) -> f64 {
        self.to_f64().expect("scalar not representable as f64")
    }
}

impl<T> Real for T where
    T: Float
        + NumAssign
        + FromPrimitive
        + ToPrimitive
        + std::fmt::Debug
        + std::fmt::Display
        + 'static
{
}

/// Numerically stable logistic function, shared by forward kernels and the
/// plain (non-autodiff) coefficient formulas so that both paths round
/// identically.
pub fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}
