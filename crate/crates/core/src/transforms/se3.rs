//! Rigid transforms in 3D with exponential (twist) coordinates.

use serde::{Deserialize, Serialize};

use crate::diffcore::linalg::{add3, cross3, scale3};
use crate::real::Real;
use crate::transforms::quat::Quat;

/// Twist: 3 rotational components followed by 3 translational components.
pub type Twist6<S> = [S; 6];

#[derive(Copy, Clone, Debug, PartialEq)]
pub struct SE3<S = f64> {
    pub rotation: Quat<S>,
    pub translation: [S; 3],
}

/// Serialized form: `{"quat": [w,x,y,z], "trans": [x,y,z]}`.
#[derive(Serialize, Deserialize)]
pub struct SE3Json {
    pub quat: [f64; 4],
    pub trans: [f64; 3],
}

impl From<SE3<f64>> for SE3Json {
    fn from(t: SE3<f64>) -> Self {
        SE3Json {
            quat: [t.rotation.w, t.rotation.x, t.rotation.y, t.rotation.z],
            trans: t.translation,
        }
    }
}

impl From<SE3Json> for SE3<f64> {
    fn from(j: SE3Json) -> Self {
        SE3 {
            rotation: Quat::new(j.quat[0], j.quat[1], j.quat[2], j.quat[3]).normalized(),
            translation: j.trans,
        }
    }
}

impl<S: Real> SE3<S> {
    pub fn identity() -> Self {
        SE3 { rotation: Quat::identity(), translation: [S::zero(); 3] }
    }

    pub fn new(rotation: Quat<S>, translation: [S; 3]) -> Self {
        SE3 { rotation, translation }
    }

    pub fn apply(&self, p: [S; 3]) -> [S; 3] {
        add3(self.rotation.rotate(p), self.translation)
    }

    pub fn inverse(&self) -> SE3<S> {
        let rinv = self.rotation.conjugate();
        SE3 { rotation: rinv, translation: scale3(rinv.rotate(self.translation), -S::one()) }
    }

    /// `self` after `first`: `(self * first)(p) = self(first(p))`.
    pub fn compose(&self, first: &SE3<S>) -> SE3<S> {
        SE3 {
            rotation: self.rotation.mul(first.rotation).normalized(),
            translation: add3(self.rotation.rotate(first.translation), self.translation),
        }
    }

    /// Lift an f64 transform into the scalar type `S`.
    pub fn lift(t: &SE3<f64>) -> SE3<S> {
        SE3 {
            rotation: Quat::new(
                S::from_f64(t.rotation.w),
                S::from_f64(t.rotation.x),
                S::from_f64(t.rotation.y),
                S::from_f64(t.rotation.z),
            ),
            translation: [
                S::from_f64(t.translation[0]),
                S::from_f64(t.translation[1]),
                S::from_f64(t.translation[2]),
            ],
        }
    }
}

/// Exponential map from twist coordinates. The translation passes through
/// the usual V(theta) integral so exp is exact for screw motions; both the
/// rotation and V switch to series below `theta = 1e-6`.
pub fn se3_exp<S: Real>(xi: Twist6<S>) -> SE3<S> {
    let omega = [xi[0], xi[1], xi[2]];
    let rho = [xi[3], xi[4], xi[5]];
    let rotation = Quat::exp_rotvec(omega);

    let theta_sq = omega[0] * omega[0] + omega[1] * omega[1] + omega[2] * omega[2];
    // V = I + B [w]x + C [w]x^2, B = (1-cos t)/t^2, C = (t - sin t)/t^3.
    let (b, c) = if theta_sq.primal() < 1e-12 {
        (
            S::from_f64(0.5) - theta_sq * S::from_f64(1.0 / 24.0)
                + theta_sq * theta_sq * S::from_f64(1.0 / 720.0),
            S::from_f64(1.0 / 6.0) - theta_sq * S::from_f64(1.0 / 120.0)
                + theta_sq * theta_sq * S::from_f64(1.0 / 5040.0),
        )
    } else {
        let theta = theta_sq.sqrt();
        (
            (S::one() - theta.cos()) / theta_sq,
            (theta - theta.sin()) / (theta_sq * theta),
        )
    };
    let wxr = cross3(omega, rho);
    let wxwxr = cross3(omega, wxr);
    let translation = add3(rho, add3(scale3(wxr, b), scale3(wxwxr, c)));
    SE3 { rotation, translation }
}

/// Action of a transform on a point.
pub fn se3_apply<S: Real>(t: &SE3<S>, p: [S; 3]) -> [S; 3] {
    t.apply(p)
}
