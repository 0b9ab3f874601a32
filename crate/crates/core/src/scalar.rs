use core::fmt::{Debug, Display};
use core::iter::Sum;

use num_traits::Float;

/// Storage tag for a floating point element type.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DType {
    F32,
    F64,
}

/// Floating point element type used by tensors and the autodiff tape.
///
/// Training runs in `f32`; gradient verification runs the same code in `f64`.
pub trait Real: Float + Sum + Default + Debug + Display + Send + Sync + 'static {
    const DTYPE: DType;

    fn lit(x: f64) -> Self;

    fn as_f64(self) -> f64;
}

impl Real for f32 {
    const DTYPE: DType = DType::F32;

    #[inline]
    fn lit(x: f64) -> Self {
        x as f32
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    const DTYPE: DType = DType::F64;

    #[inline]
    fn lit(x: f64) -> Self {
        x
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
}
