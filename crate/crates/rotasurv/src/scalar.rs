//! Scalar abstraction for the numeric core.
//!
//! Most of the estimation and covariance machinery is rational arithmetic on
//! sampling fractions and curve values, so it is written once over [`Scalar`]
//! and instantiated at `f64` for production runs and at
//! [`num_rational::BigRational`] when a test or oracle needs exact answers.
//! Formulas that genuinely require transcendentals (Neyman square roots, the
//! exponential decay kernel) take the tighter [`FloatScalar`] bound.

use std::fmt::{Debug, Display};

use num_traits::{Float, FromPrimitive, NumAssign, Signed, ToPrimitive};

/// Field-like scalar: enough structure for means, covariances, inclusion
/// probabilities and trapezoid sums.
pub trait Scalar:
    NumAssign + Signed + PartialOrd + Clone + FromPrimitive + ToPrimitive + Debug + Display + Send + Sync + 'static
{
    /// Exact conversion of a count.
    fn from_count(n: usize) -> Self {
        Self::from_usize(n).expect("count representable in scalar type")
    }

    /// Exact fraction of two counts.
    fn count_ratio(num: usize, den: usize) -> Self {
        Self::from_count(num) / Self::from_count(den)
    }

    /// Conversion from a binary float. Exact for rational scalars (the float's
    /// binary expansion is finite), identity for `f64`.
    fn from_real(x: f64) -> Self {
        Self::from_f64(x).expect("finite float representable in scalar type")
    }

    /// Lossy read-out for reporting.
    fn to_real(&self) -> f64 {
        self.to_f64().expect("scalar convertible to f64")
    }

    fn half() -> Self {
        Self::one() / (Self::one() + Self::one())
    }
}

impl<T> Scalar for T where
    T: NumAssign
        + Signed
        + PartialOrd
        + Clone
        + FromPrimitive
        + ToPrimitive
        + Debug
        + Display
        + Send
        + Sync
        + 'static
{
}

/// Scalars with IEEE float semantics; required by the few transcendental
/// formulas and by anything driven from sampled (noisy) data.
pub trait FloatScalar: Scalar + Float {}

impl<T> FloatScalar for T where T: Scalar + Float {}
