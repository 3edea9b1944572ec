use std::iter::Sum;

use ndarray::NdFloat;
use num_traits::FromPrimitive;

/// Floating point scalar the numerical modules are generic over: `f32` or `f64`.
pub trait Scalar: NdFloat + FromPrimitive + Sum + Default {}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Converts an `f64` literal into `T`.
#[inline]
pub(crate) fn lit<T: Scalar>(v: f64) -> T {
    T::from_f64(v).expect("f64 literal representable in scalar type")
}

#[inline]
pub(crate) fn from_usize<T: Scalar>(v: usize) -> T {
    T::from_usize(v).expect("usize representable in scalar type")
}
