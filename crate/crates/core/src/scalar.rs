//! Scalar abstraction shared by every numerical routine in the crate.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

/// Floating-point scalar the optimisation core is generic over.
///
/// Implemented for `f32` and `f64`. All constants are routed through
/// [`Real::lit`] so call sites stay readable.
pub trait Real:
    Float + FromPrimitive + ToPrimitive + NumAssign + Sum + Debug + Display + Default + Send + Sync + 'static
{
    /// Converts an `f64` literal into this scalar type.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal representable in scalar type")
    }

    #[inline]
    fn from_usize_lossy(n: usize) -> Self {
        Self::from_usize(n).expect("usize representable in scalar type")
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// Sum in index order; keeps reductions reproducible across thread counts.
#[inline]
pub(crate) fn ordered_sum<T: Real>(xs: impl IntoIterator<Item = T>) -> T {
    let mut acc = T::zero();
    for x in xs {
        acc += x;
    }
    acc
}

#[inline]
pub(crate) fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    ordered_sum(a.iter().zip(b).map(|(&x, &y)| x * y))
}

#[inline]
pub(crate) fn l2_norm<T: Real>(a: &[T]) -> T {
    dot(a, a).sqrt()
}
