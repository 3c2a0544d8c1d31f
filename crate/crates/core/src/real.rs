//! Generic scalar abstraction.
//!
//! All geometry, field and rendering math in this crate is written against
//! [`Real`] instead of a concrete float. The same code path then runs with
//! plain `f64`/`f32`, with forward-mode jets ([`crate::diffcore::Jet`]) to
//! obtain input derivatives, and with tape variables
//! ([`crate::diffcore::Var`]) to obtain parameter gradients.

use std::fmt::Debug;
use std::ops::{Add, Div, Mul, Neg, Sub};

use num_traits::{One, Zero};

/// Scalar type the numeric core is generic over.
///
/// Branching (`PartialOrd`, `max`, `min`) is defined on the primal value so
/// that derivative-carrying scalars order like the numbers they track.
pub trait Real:
    Copy
    + Debug
    + PartialEq
    + PartialOrd
    + Zero
    + One
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
{
    fn from_f64(x: f64) -> Self;

    /// The tracked value, stripped of any derivative information.
    fn primal(self) -> f64;

    fn sin(self) -> Self;
    fn cos(self) -> Self;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn ln_1p(self) -> Self;
    fn sqrt(self) -> Self;
    fn abs(self) -> Self;
    fn powi(self, n: i32) -> Self;

    fn recip(self) -> Self {
        Self::one() / self
    }

    /// Numerically stable `ln(1 + e^x)`.
    fn softplus(self) -> Self {
        if self.primal() > 0.0 {
            self + (-self).exp().ln_1p()
        } else {
            self.exp().ln_1p()
        }
    }

    /// Numerically stable logistic function.
    fn sigmoid(self) -> Self {
        if self.primal() >= 0.0 {
            (Self::one() + (-self).exp()).recip()
        } else {
            let e = self.exp();
            e / (Self::one() + e)
        }
    }

    fn max(self, other: Self) -> Self {
        if self.primal() >= other.primal() {
            self
        } else {
            other
        }
    }

    fn min(self, other: Self) -> Self {
        if self.primal() <= other.primal() {
            self
        } else {
            other
        }
    }
}

macro_rules! impl_real_float {
    ($t:ty) => {
        impl Real for $t {
            #[inline(always)]
            fn from_f64(x: f64) -> Self {
                x as $t
            }
            #[inline(always)]
            fn primal(self) -> f64 {
                self as f64
            }
            #[inline(always)]
            fn sin(self) -> Self {
                self.sin()
            }
            #[inline(always)]
            fn cos(self) -> Self {
                self.cos()
            }
            #[inline(always)]
            fn exp(self) -> Self {
                self.exp()
            }
            #[inline(always)]
            fn ln(self) -> Self {
                self.ln()
            }
            #[inline(always)]
            fn ln_1p(self) -> Self {
                self.ln_1p()
            }
            #[inline(always)]
            fn sqrt(self) -> Self {
                self.sqrt()
            }
            #[inline(always)]
            fn abs(self) -> Self {
                self.abs()
            }
            #[inline(always)]
            fn powi(self, n: i32) -> Self {
                self.powi(n)
            }
            #[inline(always)]
            fn recip(self) -> Self {
                self.recip()
            }
        }
    };
}

impl_real_float!(f32);
impl_real_float!(f64);

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softplus_is_stable_at_extremes() {
        assert!((f64::softplus(800.0) - 800.0).abs() < 1e-12);
        assert!(f64::softplus(-800.0).abs() < 1e-12);
        assert!((f64::softplus(0.0) - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn sigmoid_matches_definition() {
        for &x in &[-5.0, -0.3, 0.0, 0.7, 12.0] {
            let direct = 1.0 / (1.0 + (-x as f64).exp());
            assert!((f64::sigmoid(x) - direct).abs() < 1e-15);
        }
    }
}
