//! Floating-point abstraction shared by the trainable models.
//!
//! Gradient checks run in `f64`; long optimisation runs use `f32`, which is
//! roughly twice as fast through the matrix kernels.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use ndarray::{LinalgScalar, ScalarOperand};
use num_traits::Float;

use crate::datasets::ArrayData;

pub trait Real:
    Float
    + LinalgScalar
    + ScalarOperand
    + AddAssign
    + SubAssign
    + MulAssign
    + Sum
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    const NAME: &'static str;

    fn of(x: f64) -> Self;
    fn f64(self) -> f64;

    fn wrap(values: Vec<Self>) -> ArrayData;
    /// Exact extraction; `None` when the payload holds another element type.
    fn unwrap(data: &ArrayData) -> Option<Vec<Self>>;
}

impl Real for f64 {
    const NAME: &'static str = "f64";

    #[inline]
    fn of(x: f64) -> Self {
        x
    }

    #[inline]
    fn f64(self) -> f64 {
        self
    }

    fn wrap(values: Vec<Self>) -> ArrayData {
        ArrayData::F64(values)
    }

    fn unwrap(data: &ArrayData) -> Option<Vec<Self>> {
        match data {
            ArrayData::F64(v) => Some(v.clone()),
            _ => None,
        }
    }
}

impl Real for f32 {
    const NAME: &'static str = "f32";

    #[inline]
    fn of(x: f64) -> Self {
        x as f32
    }

    #[inline]
    fn f64(self) -> f64 {
        self as f64
    }

    fn wrap(values: Vec<Self>) -> ArrayData {
        ArrayData::F32(values)
    }

    fn unwrap(data: &ArrayData) -> Option<Vec<Self>> {
        match data {
            ArrayData::F32(v) => Some(v.clone()),
            _ => None,
        }
    }
}
