//! Element type abstraction over `f32` (training) and `f64` (tight gradient checks).

use std::fmt::{Debug, Display};
use std::iter::Sum;

/// Real scalar used by tensors and layers. Implemented for `f32` and `f64`.
///
/// Training runs in `f32`; the `f64` instantiation exists so finite-difference
/// checks can be run at tolerances `f32` rounding cannot reach.
pub trait Scalar:
    num_traits::Float + Sum + Debug + Display + Default + Send + Sync + 'static
{
    /// Width of the representation, 32 or 64.
    const BITS: u32;

    /// Exact for integers below 2^53; used for element counts.
    fn from_usize_(n: usize) -> Self {
        Self::from_f64(n as f64)
    }

    fn from_f64(v: f64) -> Self;
    fn to_f64_(self) -> f64;

    fn from_f32(v: f32) -> Self;
    fn to_f32_(self) -> f32;
}

impl Scalar for f32 {
    const BITS: u32 = 32;

    #[inline(always)]
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    #[inline(always)]
    fn to_f64_(self) -> f64 {
        self as f64
    }
    #[inline(always)]
    fn from_f32(v: f32) -> Self {
        v
    }
    #[inline(always)]
    fn to_f32_(self) -> f32 {
        self
    }
}

impl Scalar for f64 {
    const BITS: u32 = 64;

    #[inline(always)]
    fn from_f64(v: f64) -> Self {
        v
    }
    #[inline(always)]
    fn to_f64_(self) -> f64 {
        self
    }
    #[inline(always)]
    fn from_f32(v: f32) -> Self {
        v as f64
    }
    #[inline(always)]
    fn to_f32_(self) -> f32 {
        self as f32
    }
}
