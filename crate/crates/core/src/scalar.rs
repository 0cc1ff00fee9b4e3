//! Numeric abstraction for model parameters.

use std::fmt::{Debug, Display};

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating point type usable for feature values and model parameters.
///
/// Implemented for `f32` and `f64`. Training and scoring are generic over it;
/// reports and metrics are always computed in `f64`.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Debug + Display + Default + Send + Sync + 'static
{
    /// Lossy conversion from `f64`; finite inputs always convert.
    fn of(value: f64) -> Self {
        Self::from_f64(value).unwrap_or_else(Self::nan)
    }

    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Logistic function with the argument clamped to `[-34, 34]`.
pub fn sigmoid<T: Scalar>(x: T) -> T {
    let bound = T::of(SIGMOID_CLAMP);
    let x = x.max(-bound).min(bound);
    T::one() / (T::one() + (-x).exp())
}

pub(crate) const SIGMOID_CLAMP: f64 = 34.0;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sigmoid_is_half_at_zero() {
        assert_eq!(sigmoid(0.0f64), 0.5);
        assert_eq!(sigmoid(0.0f32), 0.5);
    }

    #[test]
    fn sigmoid_clamps_extremes() {
        assert!(sigmoid(1e6f64) < 1.0);
        assert!(sigmoid(-1e6f64) > 0.0);
        assert_eq!(sigmoid(1e6f64), sigmoid(34.0f64));
    }
}
