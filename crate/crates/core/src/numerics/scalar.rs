use std::fmt::{Debug, Display};

/// Floating-point element type for every tensor in the crate.
///
/// `f32` is what the runtime uses; `f64` exists so the same code paths can
/// be checked against finite differences at tolerances f32 cannot reach.
pub trait Scalar:
    num_traits::Float + num_traits::NumAssignOps + Debug + Display + Send + Sync + 'static
{
    fn from_f64(v: f64) -> Self;
    fn from_f32(v: f32) -> Self;
    /// Widening conversion; exact for both supported types.
    fn to_f64v(self) -> f64;
    /// Narrowing conversion (rounds for f64 sources).
    fn to_f32v(self) -> f32;
}

impl Scalar for f32 {
    #[inline]
    fn from_f64(v: f64) -> f32 {
        v as f32
    }
    #[inline]
    fn from_f32(v: f32) -> f32 {
        v
    }
    #[inline]
    fn to_f64v(self) -> f64 {
        self as f64
    }
    #[inline]
    fn to_f32v(self) -> f32 {
        self
    }
}

impl Scalar for f64 {
    #[inline]
    fn from_f64(v: f64) -> f64 {
        v
    }
    #[inline]
    fn from_f32(v: f32) -> f64 {
        v as f64
    }
    #[inline]
    fn to_f64v(self) -> f64 {
        self
    }
    #[inline]
    fn to_f32v(self) -> f32 {
        self as f32
    }
}
