//! Scalar abstraction for the numeric kernels.
//!
//! Everything in [`crate::math`] is generic over [`Scalar`] so the same
//! kernels run at `f32` or `f64`; the orchestration layer pins
//! [`crate::Real`] (= `f64`).

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating-point scalar: `f32` or `f64`.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Sum<Self> + Debug + Display + Copy + Send + Sync + 'static
{
    /// Lossless-enough conversion from a count.
    fn from_count(n: usize) -> Self {
        Self::from_usize(n).unwrap_or_else(Self::max_value)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
