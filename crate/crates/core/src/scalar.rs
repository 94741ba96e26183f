//! Floating-point abstraction so the model trains in single precision
//! while gradient checks run the identical code path in double precision.

use ndarray::{LinalgScalar, ScalarOperand};
use num_traits::Float;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};

pub trait Scalar:
    Float + LinalgScalar + ScalarOperand + std::fmt::Debug + std::fmt::Display + Send + Sync + 'static
{
    fn from_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;
    fn sample_standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self;
    /// Uniform draw from `[lo, hi)`.
    fn sample_uniform<R: Rng + ?Sized>(rng: &mut R, lo: Self, hi: Self) -> Self;
}

macro_rules! impl_scalar {
    ($t:ty) => {
        impl Scalar for $t {
            #[inline]
            fn from_f64(v: f64) -> Self {
                v as $t
            }
            #[inline]
            fn as_f64(self) -> f64 {
                self as f64
            }
            #[inline]
            fn sample_standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self {
                StandardNormal.sample(rng)
            }
            #[inline]
            fn sample_uniform<R: Rng + ?Sized>(rng: &mut R, lo: Self, hi: Self) -> Self {
                Uniform::new(lo, hi).expect("valid uniform range").sample(rng)
            }
        }
    };
}

impl_scalar!(f32);
impl_scalar!(f64);
