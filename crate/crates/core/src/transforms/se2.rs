//! Planar rigid transforms for the 2D toy pipeline.

use crate::diffcore::linalg::{add2, scale2};
use crate::real::Real;

/// Twist: rotation component first, then translation.
pub type Twist3<S> = [S; 3];

#[derive(Copy, Clone, Debug, PartialEq)]
pub struct SE2<S = f64> {
    pub angle: S,
    pub translation: [S; 2],
}

impl<S: Real> SE2<S> {
    pub fn identity() -> Self {
        SE2 { angle: S::zero(), translation: [S::zero(); 2] }
    }

    pub fn new(angle: S, translation: [S; 2]) -> Self {
        SE2 { angle, translation }
    }

    pub fn rotate(&self, p: [S; 2]) -> [S; 2] {
        let (c, s) = (self.angle.cos(), self.angle.sin());
        [c * p[0] - s * p[1], s * p[0] + c * p[1]]
    }

    pub fn apply(&self, p: [S; 2]) -> [S; 2] {
        add2(self.rotate(p), self.translation)
    }

    pub fn inverse(&self) -> SE2<S> {
        let inv = SE2 { angle: -self.angle, translation: [S::zero(); 2] };
        SE2 { angle: -self.angle, translation: scale2(inv.rotate(self.translation), -S::one()) }
    }

    pub fn compose(&self, first: &SE2<S>) -> SE2<S> {
        SE2 {
            angle: self.angle + first.angle,
            translation: add2(self.rotate(first.translation), self.translation),
        }
    }

    pub fn lift(t: &SE2<f64>) -> SE2<S> {
        SE2 {
            angle: S::from_f64(t.angle),
            translation: [S::from_f64(t.translation[0]), S::from_f64(t.translation[1])],
        }
    }
}

/// Exponential map: `V(theta) rho` translation with series below 1e-6.
pub fn se2_exp<S: Real>(xi: Twist3<S>) -> SE2<S> {
    let theta = xi[0];
    let rho = [xi[1], xi[2]];
    let theta_sq = theta * theta;
    let (a, b) = if theta_sq.primal() < 1e-12 {
        // sin t / t and (1 - cos t)/t, analytic in t (odd/even split).
        (
            S::one() - theta_sq * S::from_f64(1.0 / 6.0)
                + theta_sq * theta_sq * S::from_f64(1.0 / 120.0),
            theta * (S::from_f64(0.5) - theta_sq * S::from_f64(1.0 / 24.0)),
        )
    } else {
        ((theta.sin()) / theta, (S::one() - theta.cos()) / theta)
    };
    SE2 {
        angle: theta,
        translation: [a * rho[0] - b * rho[1], b * rho[0] + a * rho[1]],
    }
}

pub fn se2_apply<S: Real>(t: &SE2<S>, p: [S; 2]) -> [S; 2] {
    t.apply(p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::FRAC_PI_2;

    #[test]
    fn exp_zero_is_identity() {
        let t = se2_exp([0.0f64; 3]);
        assert_eq!(t.angle, 0.0);
        assert_eq!(t.translation, [0.0; 2]);
    }

    #[test]
    fn quarter_turn() {
        let t = SE2::new(FRAC_PI_2, [0.0, 0.0]);
        let p = t.apply([1.0, 0.0]);
        assert!(p[0].abs() < 1e-15 && (p[1] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn inverse_undoes_action_and_preserves_distance() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..50 {
            let t = se2_exp([rng.gen_range(-3.0..3.0), rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)]);
            let a = [rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0)];
            let b = [rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0)];
            let ra = t.apply(a);
            let rb = t.apply(b);
            let d0 = ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt();
            let d1 = ((ra[0] - rb[0]).powi(2) + (ra[1] - rb[1]).powi(2)).sqrt();
            assert!((d0 - d1).abs() < 1e-10);
            let back = t.inverse().apply(ra);
            assert!((back[0] - a[0]).abs() < 1e-10 && (back[1] - a[1]).abs() < 1e-10);
        }
    }

    #[test]
    fn exp_matches_integrated_motion() {
        // exp(xi) equals the time-1 flow of constant twist velocity; check
        // against fine Euler integration of dp/ds = omega x p + rho.
        let xi = [0.8f64, 0.3, -0.5];
        let t = se2_exp(xi);
        let p0 = [0.7, -0.2];
        let mut p = p0;
        let n = 200_000;
        let h = 1.0 / n as f64;
        for _ in 0..n {
            let dp = [-xi[0] * p[1] + xi[1], xi[0] * p[0] + xi[2]];
            p = [p[0] + h * dp[0], p[1] + h * dp[1]];
        }
        let q = t.apply(p0);
        assert!((p[0] - q[0]).abs() < 1e-4 && (p[1] - q[1]).abs() < 1e-4);
    }
}
