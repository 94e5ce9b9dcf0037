//! Numeric abstraction for scores and corpus statistics.
//!
//! Everything that averages or estimates probabilities is generic over
//! [`Scalar`], so the same code runs in `f32`, `f64` or exact rationals.

use std::fmt::Debug;

use num_rational::Ratio;
use num_traits::{FromPrimitive, Num, ToPrimitive};

pub trait Scalar: Num + FromPrimitive + ToPrimitive + Clone + PartialOrd + Debug {
    fn from_count(n: usize) -> Self {
        Self::from_usize(n).expect("count representable in scalar")
    }

    fn to_f64_lossy(&self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
impl Scalar for Ratio<i64> {}
impl Scalar for Ratio<i128> {}

/// Arithmetic mean; `None` for an empty sequence.
pub fn mean<T: Scalar, I: IntoIterator<Item = T>>(values: I) -> Option<T> {
    let mut total = T::zero();
    let mut count = 0usize;
    for v in values {
        total = total + v;
        count += 1;
    }
    (count > 0).then(|| total / T::from_count(count))
}

/// `part / whole`, with `0/0 = 0`.
pub fn fraction<T: Scalar>(part: usize, whole: usize) -> T {
    if whole == 0 {
        T::zero()
    } else {
        T::from_count(part) / T::from_count(whole)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_in_float_and_rational() {
        assert_eq!(mean([1.0f64, 0.8]).unwrap(), 0.9);
        let r: Ratio<i64> = mean([Ratio::new(1, 1), Ratio::new(4, 5)]).unwrap();
        assert_eq!(r, Ratio::new(9, 10));
        assert!(mean(Vec::<f64>::new()).is_none());
    }

    #[test]
    fn fraction_handles_zero_whole() {
        assert_eq!(fraction::<f64>(0, 0), 0.0);
        assert_eq!(fraction::<Ratio<i64>>(1, 4), Ratio::new(1, 4));
    }
}
