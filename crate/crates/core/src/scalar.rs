use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_rational::Rational64;
use num_traits::{Float, Num, NumCast, Signed};

/// Floating-point scalar for network and matrix kernels.
pub trait Real: Float + Debug + Display + Default + Sum + Send + Sync + 'static {
    fn of(x: f64) -> Self {
        <Self as NumCast>::from(x).expect("every f64 is representable (possibly rounded)")
    }

    fn of_usize(n: usize) -> Self {
        Self::of(n as f64)
    }

    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// Scalar used for frequencies and calibration statistics.
///
/// Implemented for floats and for `Rational64`; the rational instance makes
/// the disagreement/calibration identities checkable with no rounding.
pub trait Probability: Num + Signed + Clone + PartialOrd + Debug {
    fn ratio(num: usize, den: usize) -> Self;
    fn to_f64(&self) -> f64;
    /// `⌊self·k⌋`, clamped to `0..k`.
    fn bin_of(&self, k: usize) -> usize;
    /// `round(self·k)`, clamped to `0..=k`.
    fn nearest_multiple(&self, k: usize) -> usize;
}

fn clamp_index(v: f64, max: usize) -> usize {
    if v <= 0.0 {
        0
    } else {
        (v as usize).min(max)
    }
}

impl Probability for f64 {
    fn ratio(num: usize, den: usize) -> Self {
        num as f64 / den as f64
    }
    fn to_f64(&self) -> f64 {
        *self
    }
    fn bin_of(&self, k: usize) -> usize {
        clamp_index((self.to_f64() * k as f64).floor(), k - 1)
    }
    fn nearest_multiple(&self, k: usize) -> usize {
        clamp_index((self.to_f64() * k as f64).round(), k)
    }
}

impl Probability for f32 {
    fn ratio(num: usize, den: usize) -> Self {
        num as f32 / den as f32
    }
    fn to_f64(&self) -> f64 {
        *self as f64
    }
    fn bin_of(&self, k: usize) -> usize {
        clamp_index((self.to_f64() * k as f64).floor(), k - 1)
    }
    fn nearest_multiple(&self, k: usize) -> usize {
        clamp_index((self.to_f64() * k as f64).round(), k)
    }
}

impl Probability for Rational64 {
    fn ratio(num: usize, den: usize) -> Self {
        Rational64::new(num as i64, den as i64)
    }
    fn to_f64(&self) -> f64 {
        *self.numer() as f64 / *self.denom() as f64
    }
    fn bin_of(&self, k: usize) -> usize {
        let v = (*self * Rational64::from_integer(k as i64)).floor().to_integer();
        (v.max(0) as usize).min(k - 1)
    }
    fn nearest_multiple(&self, k: usize) -> usize {
        let v = (*self * Rational64::from_integer(k as i64)).round().to_integer();
        (v.max(0) as usize).min(k)
    }
}
