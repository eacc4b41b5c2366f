use ndarray::NdFloat;
use num_traits::FromPrimitive;

/// Floating point type the model and decoders are generic over.
///
/// Implemented for `f32` and `f64` only.
pub trait Scalar: NdFloat + FromPrimitive + Default {
    /// Lossy conversion from an `f64` literal or parameter.
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("f64 is representable in every Scalar")
    }

    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
