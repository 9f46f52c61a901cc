//! Scalar abstraction shared by the numeric modules.

use nalgebra::RealField;
use num_traits::{FromPrimitive, ToPrimitive};

/// Floating point scalar the filters and backends are generic over: `f32` or `f64`.
pub trait Real: RealField + Copy + FromPrimitive + ToPrimitive + Send + Sync + 'static {}

impl Real for f32 {}
impl Real for f64 {}

/// Converts an `f64` literal into `T`.
#[inline]
pub fn lit<T: Real>(x: f64) -> T {
    T::from_f64(x).expect("f64 literal representable in scalar type")
}

#[inline]
pub fn to_f64<T: Real>(x: T) -> f64 {
    x.to_f64().expect("scalar converts to f64")
}

// `RealField` pulls in both `ComplexField::abs` and `Signed::abs`; these avoid the ambiguity.
#[inline]
pub fn abs<T: Real>(x: T) -> T {
    if x < T::zero() {
        -x
    } else {
        x
    }
}

/// `ln(Σ exp(xᵢ))` with max subtraction. Returns `-∞` for an empty or all `-∞` input.
pub fn log_sum_exp<T: Real>(xs: &[T]) -> T {
    let max = xs
        .iter()
        .copied()
        .fold(lit::<T>(f64::NEG_INFINITY), |a, b| if b > a { b } else { a });
    if !max.is_finite() {
        return max;
    }
    let sum = xs.iter().fold(T::zero(), |acc, &x| acc + (x - max).exp());
    max + sum.ln()
}

/// Exponentiates log-weights after subtracting their maximum. All `-∞` gives all zeros.
pub fn exp_normalized_max<T: Real>(log_w: &[T], out: &mut Vec<T>) {
    out.clear();
    let max = log_w
        .iter()
        .copied()
        .filter(|x| x.is_finite())
        .fold(None, |a: Option<T>, b| Some(a.map_or(b, |a| if b > a { b } else { a })));
    match max {
        None => out.extend(log_w.iter().map(|_| T::zero())),
        Some(max) => out.extend(log_w.iter().map(|&x| {
            if x.is_finite() {
                (x - max).exp()
            } else {
                T::zero()
            }
        })),
    }
}
