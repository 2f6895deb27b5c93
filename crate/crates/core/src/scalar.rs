//! Scalar abstraction shared by all kernels.

use std::fmt::Debug;
use std::iter::Sum;

use num_traits::{Float, FloatConst, FromPrimitive, ToPrimitive};

/// Floating point type usable as voxel intensity.
pub trait Scalar:
    Float + FloatConst + FromPrimitive + ToPrimitive + Sum + Default + Debug + Send + Sync + 'static
{
    /// NIfTI datatype code used when writing this type.
    const NIFTI_DATATYPE: i16;
    /// NIfTI bits per voxel for this type.
    const NIFTI_BITPIX: i16;

    fn from_f64_lossy(v: f64) -> Self;

    fn to_f64_lossless(self) -> f64;

    /// Little-endian byte encoding appended to `out`.
    fn write_le(self, out: &mut Vec<u8>);

    /// Shorthand for small literal constants in generic code.
    #[inline]
    fn lit(v: f64) -> Self {
        Self::from_f64_lossy(v)
    }
}

macro_rules! impl_scalar {
    ($t:ty, $code:expr, $bits:expr) => {
        impl Scalar for $t {
            const NIFTI_DATATYPE: i16 = $code;
            const NIFTI_BITPIX: i16 = $bits;

            #[inline]
            fn from_f64_lossy(v: f64) -> Self {
                v as $t
            }

            #[inline]
            fn to_f64_lossless(self) -> f64 {
                self as f64
            }

            #[inline]
            fn write_le(self, out: &mut Vec<u8>) {
                out.extend_from_slice(&self.to_le_bytes());
            }
        }
    };
}

impl_scalar!(f32, 16, 32);
impl_scalar!(f64, 64, 64);

/// Fixed-order sum; reductions use this so results never depend on threading.
#[inline]
pub fn ordered_sum<T: Scalar>(values: impl IntoIterator<Item = T>) -> T {
    values.into_iter().fold(T::zero(), |acc, v| acc + v)
}
