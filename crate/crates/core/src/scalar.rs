//! Scalar abstraction shared by the generic modules.

use nalgebra::RealField;
use num_complex::Complex;
use num_traits::{FloatConst, FromPrimitive, ToPrimitive};

/// Real scalar usable by the lattice, potential, Bloch and series code.
///
/// Implemented for `f32` and `f64`. Elementary functions come from
/// [`RealField`]; conversions and constants from `num-traits`.
pub trait Real:
    RealField + Copy + Default + FromPrimitive + ToPrimitive + FloatConst + Send + Sync + 'static
{
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("literal fits scalar type")
    }

    fn from_int(x: i64) -> Self {
        Self::from_i64(x).expect("integer fits scalar type")
    }

    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    fn eps() -> Self;

    /// `self^(2l)` evaluated as an integer power of the square.
    fn pow2l(sq: Self, l: u32) -> Self {
        let mut acc = Self::one();
        for _ in 0..l {
            acc *= sq;
        }
        acc
    }
}

impl Real for f32 {
    fn eps() -> Self {
        f32::EPSILON
    }
}

impl Real for f64 {
    fn eps() -> Self {
        f64::EPSILON
    }
}

pub type C<T> = Complex<T>;

pub fn cpow_l<T: Real>(z: C<T>, l: u32) -> C<T> {
    let mut acc = C::new(T::one(), T::zero());
    for _ in 0..l {
        acc *= z;
    }
    acc
}

/// |z| without requiring `num_traits::Float` on the component type.
pub fn cabs<T: Real>(z: C<T>) -> T {
    (z.re * z.re + z.im * z.im).sqrt()
}

pub trait ComplexExt<T> {
    fn norm_r(&self) -> T;
}

impl<T: Real> ComplexExt<T> for C<T> {
    fn norm_r(&self) -> T {
        cabs(*self)
    }
}
