//! Minimal numeric abstraction shared by the `f64` oracle path and the
//! autodiff tape, so the centerline equations are assembled by one code path.

use std::ops::{Add, Div, Mul, Neg, Sub};

pub trait Real:
    Copy
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + Add<f64, Output = Self>
    + Sub<f64, Output = Self>
    + Mul<f64, Output = Self>
    + Div<f64, Output = Self>
{
    /// A constant with the same shape as `self`.
    fn splat(&self, value: f64) -> Self;
    fn min(&self, other: &Self) -> Self;
    fn sin(&self) -> Self;
    fn cos(&self) -> Self;

    /// `value - self`
    fn rsub(&self, value: f64) -> Self {
        -*self + value
    }
}

impl Real for f64 {
    fn splat(&self, value: f64) -> Self {
        value
    }

    fn min(&self, other: &Self) -> Self {
        f64::min(*self, *other)
    }

    fn sin(&self) -> Self {
        f64::sin(*self)
    }

    fn cos(&self) -> Self {
        f64::cos(*self)
    }
}
