//! Scalar abstraction for the numerical core.
//!
//! Every mathematical routine in this crate is generic over [`Real`], a
//! closure of the floating-point capabilities we actually use: `f32` and
//! `f64` both qualify. The crate root exports `f64`-concrete aliases for the
//! common types, which is what the command-line driver uses throughout.

use std::fmt::{Debug, Display, LowerExp};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, RemAssign, SubAssign};

use num_traits::{Float, FloatConst, FromPrimitive};

/// Floating-point scalar with the constants, conversions and iterator
/// support the numerical routines rely on.
///
/// Blanket-implemented; users never implement this by hand.
pub trait Real:
    Float
    + FloatConst
    + FromPrimitive
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + RemAssign
    + Sum<Self>
    + Debug
    + Display
    + LowerExp
    + Send
    + Sync
    + 'static
{
}

impl<T> Real for T where
    T: Float
        + FloatConst
        + FromPrimitive
        + AddAssign
        + SubAssign
        + MulAssign
        + DivAssign
        + RemAssign
        + Sum<T>
        + Debug
        + Display
        + LowerExp
        + Send
        + Sync
        + 'static
{
}

/// Lifts an `f64` literal into any [`Real`] scalar.
///
/// Panics only if the target type cannot represent the value at all, which
/// cannot happen for finite literals and the standard float types.
#[inline]
pub fn r64<R: Real>(x: f64) -> R {
    R::from_f64(x).expect("finite f64 constant must convert into the scalar type")
}

/// `n^(3/4)` computed as `sqrt(n * sqrt(n))` so that perfect fourth powers
/// (e.g. 16 -> 8) come out exact in floating point.
#[inline]
pub fn three_quarter_power<R: Real>(n: usize) -> R {
    let n = r64::<R>(n as f64);
    (n * n.sqrt()).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn r64_roundtrips_f64() {
        let x: f64 = r64(0.625);
        assert_eq!(x, 0.625);
        let y: f32 = r64(0.5);
        assert_eq!(y, 0.5f32);
    }

    #[test]
    fn three_quarter_power_exact_on_fourth_powers() {
        assert_eq!(three_quarter_power::<f64>(16), 8.0);
        assert_eq!(three_quarter_power::<f64>(256), 64.0);
        assert_eq!(three_quarter_power::<f64>(1), 1.0);
    }

    #[test]
    fn three_quarter_power_matches_powf() {
        for &n in &[2usize, 100, 400, 1000] {
            let direct = (n as f64).powf(0.75);
            let ours = three_quarter_power::<f64>(n);
            assert!((ours - direct).abs() <= 1e-12 * direct);
        }
    }
}
