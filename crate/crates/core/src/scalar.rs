//! Scalar abstraction shared by the numerical modules.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FloatConst, FromPrimitive, ToPrimitive};

/// Real floating-point scalar used throughout the numerical core.
///
/// Implemented for `f32` and `f64`. The training pipeline runs in `f64`;
/// residual losses of PINNs are badly conditioned in single precision.
pub trait Real: Float + FloatConst + FromPrimitive + ToPrimitive + Debug + Display + Default + Sum + Send + Sync + 'static {
    /// Converts an `f64` literal into this scalar type.
    #[inline]
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("f64 literal representable")
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    #[inline]
    fn from_usize_lossy(n: usize) -> Self {
        Self::from_usize(n).expect("usize representable")
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// Numerically stable softplus `ln(1 + e^r)`.
pub fn softplus<T: Real>(r: T) -> T {
    if r > T::lit(30.0) {
        r
    } else if r < T::lit(-30.0) {
        r.exp()
    } else {
        r.exp().ln_1p()
    }
}

/// Inverse of [`softplus`] for positive arguments.
pub fn softplus_inv<T: Real>(v: T) -> T {
    assert!(v > T::zero(), "softplus inverse needs a positive argument");
    if v > T::lit(30.0) {
        v
    } else {
        v.exp_m1().ln()
    }
}

pub fn sigmoid<T: Real>(r: T) -> T {
    if r >= T::zero() {
        T::one() / (T::one() + (-r).exp())
    } else {
        let e = r.exp();
        e / (T::one() + e)
    }
}

pub fn logit<T: Real>(p: T) -> T {
    assert!(p > T::zero() && p < T::one(), "logit needs p in (0, 1)");
    (p / (T::one() - p)).ln()
}

/// Gamma function evaluated in `f64`.
pub fn gamma<T: Real>(x: T) -> T {
    T::lit(statrs::function::gamma::gamma(x.to_f64_lossy()))
}

/// Digamma function evaluated in `f64`.
pub fn digamma<T: Real>(x: T) -> T {
    T::lit(statrs::function::gamma::digamma(x.to_f64_lossy()))
}

/// Mixes a master seed with a stream index into an independent 64-bit seed
/// (SplitMix64 finalizer).
pub fn derive_seed(master: u64, stream: u64) -> u64 {
    let mut z = master.wrapping_add(stream.wrapping_mul(0x9E37_79B9_7F4A_7C15)).wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
