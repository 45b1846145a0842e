//! Scalar abstraction shared by the linear-algebra core.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Real scalar usable by the sparse/dense kernels.
///
/// Implemented for `f32` and `f64`. Training code is pinned to `f64`
/// because the gradient checks assume double precision.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    /// Converts an `f64` constant, panicking only on types that cannot
    /// represent finite doubles at all (never the case for f32/f64).
    #[inline]
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("finite literal")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    /// Tolerance used for structural checks (symmetry, stochasticity).
    fn structural_tol() -> Self;
}

impl Scalar for f64 {
    fn structural_tol() -> Self {
        1e-12
    }
}

impl Scalar for f32 {
    fn structural_tol() -> Self {
        1e-5
    }
}
