//! Floating-point scalar abstraction used by the estimators and the ATE calculus.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Real scalar the estimation layer is generic over: `f32` or `f64`.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Sum + Debug + Display + Default + Send + Sync + 'static
{
    /// Lossy conversion from `f64`, used for constants and simulated data.
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("finite f64 converts to every float type")
    }

    fn of_usize(n: usize) -> Self {
        Self::from_usize(n).expect("usize converts to every float type")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("float converts to f64")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// `|a - b| <= tol * max(|a|, |b|, 1)`.
pub fn close<T: Scalar>(a: T, b: T, tol: T) -> bool {
    let scale = a.abs().max(b.abs()).max(T::one());
    (a - b).abs() <= tol * scale
}
