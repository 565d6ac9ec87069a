use std::fmt::Debug;

/// Floating-point element type for parameters and activations.
///
/// Arithmetic inside the network is carried out in `f64`; the scalar type
/// only decides the storage precision of parameters, activations and
/// gradients.
pub trait Scalar: Copy + Default + Debug + PartialOrd + Send + Sync + 'static {
    fn from_f64(x: f64) -> Self;
    fn to_f64(self) -> f64;
}

impl Scalar for f32 {
    #[inline(always)]
    fn from_f64(x: f64) -> Self {
        x as f32
    }

    #[inline(always)]
    fn to_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    #[inline(always)]
    fn from_f64(x: f64) -> Self {
        x
    }

    #[inline(always)]
    fn to_f64(self) -> f64 {
        self
    }
}
