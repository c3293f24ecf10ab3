//! Scalar abstraction for the numeric core.
//!
//! Everything downstream of parsing is generic over [`Scalar`] so the same
//! code runs in `f32` or `f64`; the crate root exports `f64` aliases, which
//! is what the CLI uses.

use std::fmt::{Debug, Display, LowerExp};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating-point scalar for network, flow and market computations.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Sum + Display + LowerExp + Debug + Send + Sync + 'static
{
    /// Shorthand for casting an `f64` literal (tolerances, defaults).
    fn c(v: f64) -> Self {
        Self::from_f64(v).expect("f64 literal representable in scalar type")
    }

    /// Lossy view as `f64`, used for formatting and reporting only.
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
