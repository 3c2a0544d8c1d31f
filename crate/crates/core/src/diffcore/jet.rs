//! Forward-mode jets: a value plus directional derivatives along up to `N`
//! seed directions, propagated exactly through arithmetic by the chain rule.
//!
//! The scalar inside a jet is itself a [`Real`], so jets nest
//! (`Jet<M, Jet<N, f64>>` carries second-order cross derivatives) and can be
//! built over tape variables for reverse-over-forward differentiation.

use std::cmp::Ordering;
use std::ops::{Add, Div, Mul, Neg, Sub};

use num_traits::{One, Zero};

use crate::real::Real;

#[derive(Copy, Clone, Debug, PartialEq)]
pub struct Jet<const N: usize, S = f64> {
    pub v: S,
    pub d: [S; N],
}

pub type Jet3 = Jet<3, f64>;
pub type Jet4 = Jet<4, f64>;

impl<const N: usize, S: Real> Jet<N, S> {
    #[inline]
    pub fn constant(v: S) -> Self {
        Jet { v, d: [S::zero(); N] }
    }

    /// A jet seeded as the `k`-th independent variable: d/d(dir k) = 1.
    #[inline]
    pub fn seeded(v: S, k: usize) -> Self {
        let mut d = [S::zero(); N];
        d[k] = S::one();
        Jet { v, d }
    }

    #[inline]
    pub fn with_partials(v: S, d: [S; N]) -> Self {
        Jet { v, d }
    }

    #[inline]
    fn map(self, v: S, dfdv: S) -> Self {
        let mut d = [S::zero(); N];
        for k in 0..N {
            d[k] = self.d[k] * dfdv;
        }
        Jet { v, d }
    }
}

impl<const N: usize, S: Real> Add for Jet<N, S> {
    type Output = Self;
    #[inline]
    fn add(self, rhs: Self) -> Self {
        let mut d = self.d;
        for k in 0..N {
            d[k] = d[k] + rhs.d[k];
        }
        Jet { v: self.v + rhs.v, d }
    }
}

impl<const N: usize, S: Real> Sub for Jet<N, S> {
    type Output = Self;
    #[inline]
    fn sub(self, rhs: Self) -> Self {
        let mut d = self.d;
        for k in 0..N {
            d[k] = d[k] - rhs.d[k];
        }
        Jet { v: self.v - rhs.v, d }
    }
}

impl<const N: usize, S: Real> Mul for Jet<N, S> {
    type Output = Self;
    #[inline]
    fn mul(self, rhs: Self) -> Self {
        let mut d = [S::zero(); N];
        for k in 0..N {
            d[k] = self.d[k] * rhs.v + self.v * rhs.d[k];
        }
        Jet { v: self.v * rhs.v, d }
    }
}

impl<const N: usize, S: Real> Div for Jet<N, S> {
    type Output = Self;
    #[inline]
    fn div(self, rhs: Self) -> Self {
        let inv = rhs.v.recip();
        let v = self.v * inv;
        let mut d = [S::zero(); N];
        for k in 0..N {
            d[k] = (self.d[k] - v * rhs.d[k]) * inv;
        }
        Jet { v, d }
    }
}

impl<const N: usize, S: Real> Neg for Jet<N, S> {
    type Output = Self;
    #[inline]
    fn neg(self) -> Self {
        let mut d = [S::zero(); N];
        for k in 0..N {
            d[k] = -self.d[k];
        }
        Jet { v: -self.v, d }
    }
}

impl<const N: usize, S: Real> Zero for Jet<N, S> {
    #[inline]
    fn zero() -> Self {
        Jet::constant(S::zero())
    }
    #[inline]
    fn is_zero(&self) -> bool {
        self.v.is_zero() && self.d.iter().all(|p| p.is_zero())
    }
}

impl<const N: usize, S: Real> One for Jet<N, S> {
    #[inline]
    fn one() -> Self {
        Jet::constant(S::one())
    }
}

// Jets order by their tracked value; partials do not participate.
impl<const N: usize, S: Real> PartialOrd for Jet<N, S> {
    #[inline]
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        self.v.partial_cmp(&other.v)
    }
}

impl<const N: usize, S: Real> Real for Jet<N, S> {
    #[inline]
    fn from_f64(x: f64) -> Self {
        Jet::constant(S::from_f64(x))
    }

    #[inline]
    fn primal(self) -> f64 {
        self.v.primal()
    }

    #[inline]
    fn sin(self) -> Self {
        self.map(self.v.sin(), self.v.cos())
    }

    #[inline]
    fn cos(self) -> Self {
        self.map(self.v.cos(), -self.v.sin())
    }

    #[inline]
    fn exp(self) -> Self {
        let e = self.v.exp();
        self.map(e, e)
    }

    #[inline]
    fn ln(self) -> Self {
        self.map(self.v.ln(), self.v.recip())
    }

    #[inline]
    fn ln_1p(self) -> Self {
        self.map(self.v.ln_1p(), (S::one() + self.v).recip())
    }

    #[inline]
    fn sqrt(self) -> Self {
        let r = self.v.sqrt();
        // Subgradient 0 at the origin so vector norms stay finite there.
        let dfdv = if r.primal() > 0.0 {
            (S::from_f64(2.0) * r).recip()
        } else {
            S::zero()
        };
        self.map(r, dfdv)
    }

    #[inline]
    fn abs(self) -> Self {
        let x = self.v.primal();
        let s = if x > 0.0 {
            S::one()
        } else if x < 0.0 {
            -S::one()
        } else {
            S::zero()
        };
        self.map(self.v.abs(), s)
    }

    #[inline]
    fn powi(self, n: i32) -> Self {
        if n == 0 {
            return Self::one();
        }
        self.map(self.v.powi(n), S::from_f64(n as f64) * self.v.powi(n - 1))
    }

    #[inline]
    fn softplus(self) -> Self {
        self.map(self.v.softplus(), self.v.sigmoid())
    }

    #[inline]
    fn sigmoid(self) -> Self {
        let s = self.v.sigmoid();
        self.map(s, s * (S::one() - s))
    }
}
