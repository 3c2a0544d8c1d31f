//! Quaternions for rotation, generic over the scalar.

use crate::diffcore::linalg::{add3, cross3, scale3, Mat3};
use crate::real::Real;

/// Quaternion `(w, x, y, z)`. Rotation operations assume unit norm;
/// [`Quat::normalized`] restores it after drifting arithmetic.
#[derive(Copy, Clone, Debug, PartialEq)]
pub struct Quat<S = f64> {
    pub w: S,
    pub x: S,
    pub y: S,
    pub z: S,
}

impl<S: Real> Quat<S> {
    pub fn identity() -> Self {
        Quat { w: S::one(), x: S::zero(), y: S::zero(), z: S::zero() }
    }

    pub fn new(w: S, x: S, y: S, z: S) -> Self {
        Quat { w, x, y, z }
    }

    pub fn norm(self) -> S {
        (self.w * self.w + self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    pub fn normalized(self) -> Self {
        let inv = self.norm().recip();
        Quat { w: self.w * inv, x: self.x * inv, y: self.y * inv, z: self.z * inv }
    }

    pub fn conjugate(self) -> Self {
        Quat { w: self.w, x: -self.x, y: -self.y, z: -self.z }
    }

    pub fn mul(self, r: Quat<S>) -> Quat<S> {
        Quat {
            w: self.w * r.w - self.x * r.x - self.y * r.y - self.z * r.z,
            x: self.w * r.x + self.x * r.w + self.y * r.z - self.z * r.y,
            y: self.w * r.y - self.x * r.z + self.y * r.w + self.z * r.x,
            z: self.w * r.z + self.x * r.y - self.y * r.x + self.z * r.w,
        }
    }

    /// Rotate a vector: `v + 2w (q_v x v) + 2 q_v x (q_v x v)`.
    pub fn rotate(self, v: [S; 3]) -> [S; 3] {
        let qv = [self.x, self.y, self.z];
        let t = scale3(cross3(qv, v), S::from_f64(2.0));
        add3(add3(v, scale3(t, self.w)), cross3(qv, t))
    }

    pub fn to_matrix(self) -> Mat3<S> {
        let two = S::from_f64(2.0);
        let (w, x, y, z) = (self.w, self.x, self.y, self.z);
        Mat3([
            [
                S::one() - two * (y * y + z * z),
                two * (x * y - w * z),
                two * (x * z + w * y),
            ],
            [
                two * (x * y + w * z),
                S::one() - two * (x * x + z * z),
                two * (y * z - w * x),
            ],
            [
                two * (x * z - w * y),
                two * (y * z + w * x),
                S::one() - two * (x * x + y * y),
            ],
        ])
    }

    /// Exponential of a rotation vector (axis-angle). Series below
    /// `theta < 1e-6` keeps the map smooth at zero.
    pub fn exp_rotvec(omega: [S; 3]) -> Quat<S> {
        let theta_sq = omega[0] * omega[0] + omega[1] * omega[1] + omega[2] * omega[2];
        let half = S::from_f64(0.5);
        // sin(theta/2)/theta and cos(theta/2), both analytic in theta^2.
        let (c, s_over) = if theta_sq.primal() < 1e-12 {
            let c = S::one() - theta_sq * S::from_f64(1.0 / 8.0)
                + theta_sq * theta_sq * S::from_f64(1.0 / 384.0);
            let s = half - theta_sq * S::from_f64(1.0 / 48.0)
                + theta_sq * theta_sq * S::from_f64(1.0 / 3840.0);
            (c, s)
        } else {
            let theta = theta_sq.sqrt();
            ((theta * half).cos(), (theta * half).sin() / theta)
        };
        Quat { w: c, x: omega[0] * s_over, y: omega[1] * s_over, z: omega[2] * s_over }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{FRAC_PI_2, PI};

    #[test]
    fn rotation_about_z() {
        let q = Quat::<f64>::exp_rotvec([0.0, 0.0, FRAC_PI_2]);
        let v = q.rotate([1.0, 0.0, 0.0]);
        assert!((v[0]).abs() < 1e-15 && (v[1] - 1.0).abs() < 1e-15 && v[2].abs() < 1e-15);
    }

    #[test]
    fn exp_of_pi_is_half_turn() {
        let q = Quat::<f64>::exp_rotvec([0.0, 0.0, PI]);
        let v = q.rotate([1.0, 0.0, 0.0]);
        assert!((v[0] + 1.0).abs() < 1e-14 && v[1].abs() < 1e-14);
    }

    #[test]
    fn matrix_and_quaternion_rotation_agree() {
        let q = Quat::<f64>::exp_rotvec([0.3, -0.7, 0.2]).normalized();
        let m = q.to_matrix();
        let v = [0.5, -1.2, 2.0];
        let qa = q.rotate(v);
        let ma = m.mul_vec(v);
        for i in 0..3 {
            assert!((qa[i] - ma[i]).abs() < 1e-14);
        }
    }

    #[test]
    fn unit_norm_after_normalize() {
        let q = Quat::new(0.3, 1.0, -2.0, 0.5).normalized();
        assert!((q.norm() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn series_branch_matches_closed_form() {
        let theta = 0.99e-6; // below the series threshold
        let q = Quat::<f64>::exp_rotvec([theta, 0.0, 0.0]);
        assert!((q.w - (theta / 2.0).cos()).abs() < 1e-15);
        assert!((q.x - (theta / 2.0).sin()).abs() < 1e-15);
        assert_eq!(q.y, 0.0);
        assert_eq!(q.z, 0.0);
    }
}
