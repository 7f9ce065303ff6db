//! Floating-point abstraction so the same kernels run in `f32` for training
//! and `f64` for finite-difference validation.

use std::fmt::{Debug, Display};
use std::iter::Sum;

/// Element type for all tensors and parameters.
///
/// Training uses `f32`; gradient checks instantiate the identical code with
/// `f64` so central differences have enough precision to be a meaningful
/// oracle.
pub trait Scalar:
    num_traits::Float + num_traits::NumAssign + Copy + Debug + Display + Default + Sum + Send + Sync + 'static
{
    /// Short type tag recorded in checkpoint metadata.
    const NAME: &'static str;

    fn from_f64(x: f64) -> Self;
    fn to_f64(self) -> f64;
    fn from_f32(x: f32) -> Self;
    fn to_f32(self) -> f32;
}

impl Scalar for f32 {
    const NAME: &'static str = "f32";

    #[inline]
    fn from_f64(x: f64) -> Self {
        x as f32
    }
    #[inline]
    fn to_f64(self) -> f64 {
        self as f64
    }
    #[inline]
    fn from_f32(x: f32) -> Self {
        x
    }
    #[inline]
    fn to_f32(self) -> f32 {
        self
    }
}

impl Scalar for f64 {
    const NAME: &'static str = "f64";

    #[inline]
    fn from_f64(x: f64) -> Self {
        x
    }
    #[inline]
    fn to_f64(self) -> f64 {
        self
    }
    #[inline]
    fn from_f32(x: f32) -> Self {
        x as f64
    }
    #[inline]
    fn to_f32(self) -> f32 {
        self as f32
    }
}
