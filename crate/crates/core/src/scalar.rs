//! Scalar abstraction for the map layer.

use std::fmt::Debug;

use num_traits::{Float, FloatConst, FromPrimitive, NumAssign};

/// Real floating point types the map evaluation layer is generic over.
pub trait Scalar:
    Float + FloatConst + FromPrimitive + NumAssign + Debug + Default + Send + Sync + 'static
{
    /// Converts an `f64` literal, saturating through the usual float cast.
    fn lit(v: f64) -> Self;
    /// Widens to `f64` for reporting and for the estimators, which run in `f64`.
    fn to_f64_lossy(self) -> f64;
}

macro_rules! impl_scalar {
    ($t:ty) => {
        impl Scalar for $t {
            #[inline]
            fn lit(v: f64) -> Self {
                v as $t
            }
            #[inline]
            fn to_f64_lossy(self) -> f64 {
                self as f64
            }
        }
    };
}

impl_scalar!(f32);
impl_scalar!(f64);
