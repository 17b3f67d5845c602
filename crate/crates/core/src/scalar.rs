//! Scalar abstraction for the numerical core.
//!
//! Everything in this crate is generic over a real scalar so the same code
//! runs in `f32` or `f64`. `f64` is the default used by the CLI.

use nalgebra::RealField;
use num_traits::FromPrimitive;

/// Real scalar usable throughout the crate.
pub trait Scalar: RealField + FromPrimitive + Copy {}

impl<T: RealField + FromPrimitive + Copy> Scalar for T {}

/// Shorthand conversion from an `f64` literal into the working scalar.
#[inline]
pub fn fp<T: Scalar>(x: f64) -> T {
    T::from_f64(x).expect("f64 literal must convert into the scalar type")
}
