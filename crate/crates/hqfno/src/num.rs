//! Scalar abstraction: all numeric kernels are generic over [`Real`],
//! implemented for `f32` and `f64`. Concrete aliases live at the crate root.

use num_traits::{Float, FloatConst, FromPrimitive, NumAssign, ToPrimitive};
use std::fmt::{Debug, Display};
use std::iter::Sum;

/// Floating-point scalar used throughout the crate.
pub trait Real:
    Float
    + FloatConst
    + NumAssign
    + FromPrimitive
    + ToPrimitive
    + Sum
    + Display
    + Debug
    + Send
    + Sync
    + rustfft::FftNum
    + 'static
{
}

impl Real for f32 {}
impl Real for f64 {}

/// Complex number over a [`Real`] scalar.
pub type Cplx<T> = num_complex::Complex<T>;

/// Convert an `f64` constant to the working scalar.
#[inline]
pub fn r<T: Real>(x: f64) -> T {
    T::from_f64(x).expect("f64 constant convertible to scalar")
}

#[inline]
pub fn sigmoid<T: Real>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

/// Derivative of the logistic sigmoid expressed through its output `s`.
#[inline]
pub fn dsigmoid_from_output<T: Real>(s: T) -> T {
    s * (T::one() - s)
}

/// Error function, evaluated in double precision.
#[inline]
pub fn erf<T: Real>(x: T) -> T {
    r(libm::erf(x.to_f64().expect("scalar convertible to f64")))
}

/// GELU in the exact Gaussian-CDF form, x * Phi(x).
#[inline]
pub fn gelu<T: Real>(x: T) -> T {
    x * normal_cdf(x)
}

/// d/dx GELU = Phi(x) + x * phi(x).
#[inline]
pub fn dgelu<T: Real>(x: T) -> T {
    normal_cdf(x) + x * normal_pdf(x)
}

#[inline]
pub fn normal_cdf<T: Real>(x: T) -> T {
    let half = r::<T>(0.5);
    half * (T::one() + erf(x / T::SQRT_2()))
}

#[inline]
pub fn normal_pdf<T: Real>(x: T) -> T {
    let inv_sqrt_2pi = r::<T>(0.398_942_280_401_432_7);
    inv_sqrt_2pi * (-x * x * r::<T>(0.5)).exp()
}

#[inline]
pub fn silu<T: Real>(x: T) -> T {
    x * sigmoid(x)
}

#[inline]
pub fn dsilu<T: Real>(x: T) -> T {
    let s = sigmoid(x);
    s * (T::one() + x * (T::one() - s))
}

/// Linear-interpolation quantile of a slice, q in [0, 1].
///
/// Matches the common "linear" convention: index h = q*(n-1), value
/// interpolated between floor(h) and ceil(h) of the sorted data.
pub fn quantile<T: Real>(data: &[T], q: f64) -> T {
    assert!(!data.is_empty(), "quantile of empty slice");
    assert!((0.0..=1.0).contains(&q), "quantile level out of [0,1]");
    let mut sorted: Vec<T> = data.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite values"));
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = q * (n - 1) as f64;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    let frac = r::<T>(h - lo as f64);
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}
