//! Scalar abstraction over `f32`/`f64` for the numeric core.

use std::fmt::{Debug, Display};

use num_traits::{Float, FloatConst, FromPrimitive, NumAssign};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

/// Floating-point scalar the toolkit is generic over.
pub trait Real:
    Float + FloatConst + FromPrimitive + NumAssign + Display + Debug + Send + Sync + 'static
{
    /// One standard normal draw from `rng`.
    fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self;

    /// Parse decimal text as produced by `Display` (shortest round-trip form).
    fn parse_decimal(s: &str) -> Option<Self>;

    /// Conversion from `f64` literals and config scalars (rounds for `f32`).
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("f64 converts to every Real")
    }

    fn to_f64_lossy(self) -> f64 {
        self.to_f64().expect("Real converts to f64")
    }
}

impl Real for f32 {
    fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self {
        StandardNormal.sample(rng)
    }

    fn parse_decimal(s: &str) -> Option<Self> {
        s.parse().ok()
    }
}

impl Real for f64 {
    fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self {
        StandardNormal.sample(rng)
    }

    fn parse_decimal(s: &str) -> Option<Self> {
        s.parse().ok()
    }
}
