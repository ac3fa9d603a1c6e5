//! Floating-point operation counting.
//!
//! Kernels whose cost matters are written against [`Real`]. Running them on
//! [`Counted`] instead of `f64` tallies arithmetic in a thread-local counter:
//! add, subtract, multiply, divide, negate, square root, arccosine and
//! absolute value each count one. Comparisons, `min`, `max` and `clamp` are
//! free.

use std::cell::Cell;
use std::fmt::Debug;
use std::ops::{Add, Div, Mul, Neg, Sub};

thread_local! {
    static FLOPS: Cell<u64> = const { Cell::new(0) };
}

pub trait Real:
    Copy
    + Debug
    + PartialOrd
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
{
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
    fn sqrt(self) -> Self;
    fn acos(self) -> Self;
    fn abs(self) -> Self;

    fn zero() -> Self {
        Self::from_f64(0.0)
    }

    fn min(self, other: Self) -> Self {
        if other < self { other } else { self }
    }

    fn max(self, other: Self) -> Self {
        if other > self { other } else { self }
    }

    fn clamp(self, lo: Self, hi: Self) -> Self {
        self.max(lo).min(hi)
    }
}

impl Real for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }
    fn to_f64(self) -> f64 {
        self
    }
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    fn acos(self) -> Self {
        f64::acos(self)
    }
    fn abs(self) -> Self {
        f64::abs(self)
    }
}

/// `f64` that counts its arithmetic.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct Counted(pub f64);

fn tick() {
    FLOPS.with(|c| c.set(c.get() + 1));
}

/// Run `f` and return its result with the number of operations it performed
/// on [`Counted`] values.
pub fn count_flops<T>(f: impl FnOnce() -> T) -> (T, u64) {
    let before = FLOPS.with(Cell::get);
    let out = f();
    (out, FLOPS.with(Cell::get) - before)
}

macro_rules! counted_binop {
    ($trait:ident, $method:ident, $op:tt) => {
        impl $trait for Counted {
            type Output = Counted;
            fn $method(self, rhs: Counted) -> Counted {
                tick();
                Counted(self.0 $op rhs.0)
            }
        }
    };
}

counted_binop!(Add, add, +);
counted_binop!(Sub, sub, -);
counted_binop!(Mul, mul, *);
counted_binop!(Div, div, /);

impl Neg for Counted {
    type Output = Counted;
    fn neg(self) -> Counted {
        tick();
        Counted(-self.0)
    }
}

impl Real for Counted {
    fn from_f64(v: f64) -> Self {
        Counted(v)
    }
    fn to_f64(self) -> f64 {
        self.0
    }
    fn sqrt(self) -> Self {
        tick();
        Counted(self.0.sqrt())
    }
    fn acos(self) -> Self {
        tick();
        Counted(self.0.acos())
    }
    fn abs(self) -> Self {
        tick();
        Counted(self.0.abs())
    }
}

/// Three-vector over any [`Real`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct V3<T>(pub [T; 3]);

impl<T: Real> V3<T> {
    pub fn from_f64(v: [f64; 3]) -> Self {
        V3(v.map(T::from_f64))
    }

    pub fn sub(&self, other: &Self) -> Self {
        let [a, b, c] = self.0;
        let [x, y, z] = other.0;
        V3([a - x, b - y, c - z])
    }

    pub fn dot(&self, other: &Self) -> T {
        let [a, b, c] = self.0;
        let [x, y, z] = other.0;
        a * x + b * y + c * z
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_arithmetic_only() {
        let ((), n) = count_flops(|| {
            let a = Counted(2.0);
            let b = Counted(3.0);
            let c = (a + b) * a - b / a;
            let _ = (-c).abs().sqrt().min(a).clamp(Counted(0.0), b);
            assert!(a < b);
        });
        assert_eq!(n, 7);
    }

    #[test]
    fn vector_ops_cost() {
        let u = V3::<Counted>::from_f64([1.0, 2.0, 3.0]);
        let v = V3::<Counted>::from_f64([0.5, 0.0, -1.0]);
        let (d, n) = count_flops(|| u.sub(&v).dot(&v));
        assert_eq!(n, 8);
        assert_eq!(d.0, 0.25 + 0.0 - 4.0);
    }

    #[test]
    fn plain_f64_matches_counted() {
        fn poly<T: Real>(x: T) -> T {
            x * x * x - T::from_f64(2.0) * x + T::from_f64(0.5).sqrt()
        }
        assert_eq!(poly(1.7_f64), poly(Counted(1.7)).0);
    }
}
