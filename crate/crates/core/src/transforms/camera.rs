//! Pinhole camera and normalized device coordinates.
//!
//! Conventions, fixed once for the whole crate:
//! - camera frame looks down +z; a point is visible when `z >= near`;
//! - pixel `(u, v)` has the principal point at the image center;
//! - NDC maps camera space by `x_ndc = (2 fx / W) x / z`,
//!   `y_ndc = (2 fy / H) y / z`, `z_ndc = 1 - near / z`, so depth occupies
//!   `[0, 1)` with 0 on the near plane and 1 the limit at infinity.
//!
//! Under these conventions a rigid transform `(R, t)` of camera-space points
//! acts on NDC coordinates without leaving the bounded parameterization:
//!
//! ```text
//! u = (x W / (2 fx), y H / (2 fy), 1)
//! (a, b, c) = R u + ((1 - z) / near) t
//! x' = (2 fx / W) a / c,  y' = (2 fy / H) b / c,  z' = 1 - (1 - z) / c
//! ```
//!
//! which reduces to the identity for `R = I, t = 0` and agrees with
//! convert -> transform -> convert wherever the Euclidean route is finite.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::real::Real;
use crate::transforms::se3::{SE3Json, SE3};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CameraError {
    #[error("point is in front of the near plane")]
    BeforeNearPlane,
    #[error("transformed point crossed the near plane")]
    NearPlaneCrossed,
}

/// Pinhole camera with an NDC parameterization of its frustum.
///
/// `pose` maps world points into this camera's frame.
#[derive(Clone, Debug)]
pub struct NdcCamera {
    pub fx: f64,
    pub fy: f64,
    pub width: f64,
    pub height: f64,
    pub near: f64,
    pub pose: SE3<f64>,
}

#[derive(Serialize, Deserialize)]
struct NdcCameraJson {
    fx: f64,
    fy: f64,
    #[serde(rename = "W")]
    w: f64,
    #[serde(rename = "H")]
    h: f64,
    near: f64,
    pose: SE3Json,
}

impl Serialize for NdcCamera {
    fn serialize<T: serde::Serializer>(&self, s: T) -> Result<T::Ok, T::Error> {
        NdcCameraJson {
            fx: self.fx,
            fy: self.fy,
            w: self.width,
            h: self.height,
            near: self.near,
            pose: self.pose.into(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for NdcCamera {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let j = NdcCameraJson::deserialize(d)?;
        Ok(NdcCamera {
            fx: j.fx,
            fy: j.fy,
            width: j.w,
            height: j.h,
            near: j.near,
            pose: j.pose.into(),
        })
    }
}

impl NdcCamera {
    pub fn world_to_camera<S: Real>(&self, p_world: [S; 3]) -> [S; 3] {
        SE3::<S>::lift(&self.pose).apply(p_world)
    }

    pub fn camera_to_world<S: Real>(&self, p_cam: [S; 3]) -> [S; 3] {
        SE3::<S>::lift(&self.pose.inverse()).apply(p_cam)
    }

    /// Perspective projection of a camera-frame point to pixel coordinates.
    pub fn project_camera<S: Real>(&self, p_cam: [S; 3]) -> Result<[S; 2], CameraError> {
        if p_cam[2].primal() <= 0.0 {
            return Err(CameraError::BeforeNearPlane);
        }
        let inv_z = p_cam[2].recip();
        Ok([
            S::from_f64(self.fx) * p_cam[0] * inv_z + S::from_f64(self.width * 0.5),
            S::from_f64(self.fy) * p_cam[1] * inv_z + S::from_f64(self.height * 0.5),
        ])
    }

    /// Project a world point to pixels.
    pub fn project_world<S: Real>(&self, p_world: [S; 3]) -> Result<[S; 2], CameraError> {
        self.project_camera(self.world_to_camera(p_world))
    }

    /// Camera space to NDC. Errors for points in front of the near plane.
    pub fn ndc_from_camera<S: Real>(&self, p_cam: [S; 3]) -> Result<[S; 3], CameraError> {
        let z = p_cam[2];
        if z.primal() < self.near {
            return Err(CameraError::BeforeNearPlane);
        }
        let inv_z = z.recip();
        Ok([
            S::from_f64(2.0 * self.fx / self.width) * p_cam[0] * inv_z,
            S::from_f64(2.0 * self.fy / self.height) * p_cam[1] * inv_z,
            S::one() - S::from_f64(self.near) * inv_z,
        ])
    }

    /// NDC back to camera space.
    pub fn camera_from_ndc<S: Real>(&self, p_ndc: [S; 3]) -> [S; 3] {
        let z = S::from_f64(self.near) / (S::one() - p_ndc[2]);
        [
            p_ndc[0] * z * S::from_f64(self.width / (2.0 * self.fx)),
            p_ndc[1] * z * S::from_f64(self.height / (2.0 * self.fy)),
            z,
        ]
    }

    /// Apply a camera-frame rigid transform directly on NDC coordinates.
    ///
    /// No unbounded intermediate appears, so the map stays stable for depth
    /// approaching the far limit `z -> 1`.
    pub fn ndc_se3_apply<S: Real>(&self, t: &SE3<S>, p_ndc: [S; 3]) -> Result<[S; 3], CameraError> {
        let u = [
            p_ndc[0] * S::from_f64(self.width / (2.0 * self.fx)),
            p_ndc[1] * S::from_f64(self.height / (2.0 * self.fy)),
            S::one(),
        ];
        let ru = t.rotation.rotate(u);
        let k = (S::one() - p_ndc[2]) * S::from_f64(1.0 / self.near);
        let a = ru[0] + k * t.translation[0];
        let b = ru[1] + k * t.translation[1];
        let c = ru[2] + k * t.translation[2];
        if c.primal() <= 0.0 {
            return Err(CameraError::NearPlaneCrossed);
        }
        let inv_c = c.recip();
        let z_out = S::one() - (S::one() - p_ndc[2]) * inv_c;
        if z_out.primal() < 0.0 {
            return Err(CameraError::NearPlaneCrossed);
        }
        Ok([
            S::from_f64(2.0 * self.fx / self.width) * a * inv_c,
            S::from_f64(2.0 * self.fy / self.height) * b * inv_c,
            z_out,
        ])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::linalg::{norm3, sub3};
    use crate::transforms::se3::se3_exp;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn camera() -> NdcCamera {
        NdcCamera {
            fx: 80.0,
            fy: 75.0,
            width: 64.0,
            height: 48.0,
            near: 1.0,
            pose: SE3::identity(),
        }
    }

    #[test]
    fn near_plane_axis_maps_to_depth_zero() {
        let cam = camera();
        let ndc = cam.ndc_from_camera([0.0, 0.0, cam.near]).unwrap();
        assert_eq!(ndc, [0.0, 0.0, 0.0]);
    }

    #[test]
    fn round_trip_is_identity() {
        let cam = camera();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..200 {
            let p = [
                rng.gen_range(-2.0..2.0),
                rng.gen_range(-2.0..2.0),
                rng.gen_range(1.0..50.0),
            ];
            let back = cam.camera_from_ndc(cam.ndc_from_camera(p).unwrap());
            assert!(norm3(sub3(back, p)) < 1e-9 * norm3(p).max(1.0));
        }
    }

    #[test]
    fn deep_points_approach_far_limit() {
        let cam = camera();
        let ndc = cam.ndc_from_camera([0.0, 0.0, 1000.0 * cam.near]).unwrap();
        assert!(1.0 - ndc[2] <= 2.0 * cam.near / 1000.0);
        assert!(ndc[2] < 1.0);
    }

    #[test]
    fn before_near_plane_is_domain_error() {
        let cam = camera();
        assert_eq!(
            cam.ndc_from_camera([0.0, 0.0, 0.5]).unwrap_err(),
            CameraError::BeforeNearPlane
        );
    }

    #[test]
    fn ndc_identity_transform_is_identity() {
        let cam = camera();
        let p = [0.3, -0.8, 0.97];
        let q = cam.ndc_se3_apply(&SE3::identity(), p).unwrap();
        for i in 0..3 {
            assert!((q[i] - p[i]).abs() <= 1e-12);
        }
    }

    #[test]
    fn ndc_transform_matches_euclidean_round_trip() {
        let cam = camera();
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let mut tested = 0;
        while tested < 500 {
            let t = se3_exp([
                rng.gen_range(-0.2..0.2),
                rng.gen_range(-0.2..0.2),
                rng.gen_range(-0.2..0.2),
                rng.gen_range(-0.5..0.5),
                rng.gen_range(-0.5..0.5),
                rng.gen_range(-0.5..0.5),
            ]);
            let p_ndc = [
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(0.0..0.999),
            ];
            let direct = match cam.ndc_se3_apply(&t, p_ndc) {
                Ok(v) => v,
                Err(_) => continue,
            };
            let p_cam = cam.camera_from_ndc(p_ndc);
            let moved = t.apply(p_cam);
            let oracle = match cam.ndc_from_camera(moved) {
                Ok(v) => v,
                Err(_) => continue,
            };
            for i in 0..3 {
                assert!(
                    (direct[i] - oracle[i]).abs() < 1e-7,
                    "component {i}: {} vs {}",
                    direct[i],
                    oracle[i]
                );
            }
            tested += 1;
        }
    }

    #[test]
    fn ndc_composition_matches_composed_transform() {
        let cam = camera();
        let t1 = se3_exp([0.05, -0.02, 0.1, 0.2, 0.0, -0.1]);
        let t2 = se3_exp([-0.1, 0.04, 0.02, -0.05, 0.15, 0.2]);
        let p = [0.2, 0.4, 0.7];
        let seq = cam.ndc_se3_apply(&t2, cam.ndc_se3_apply(&t1, p).unwrap()).unwrap();
        let combined = cam.ndc_se3_apply(&t2.compose(&t1), p).unwrap();
        for i in 0..3 {
            assert!((seq[i] - combined[i]).abs() < 1e-7);
        }
    }

    #[test]
    fn axial_translation_at_mid_depth() {
        let cam = camera();
        let t = SE3::new(crate::transforms::quat::Quat::identity(), [0.0, 0.0, 0.8]);
        let p = [0.1, -0.2, 0.5];
        let direct = cam.ndc_se3_apply(&t, p).unwrap();
        let oracle = cam
            .ndc_from_camera(t.apply(cam.camera_from_ndc(p)))
            .unwrap();
        for i in 0..3 {
            assert!((direct[i] - oracle[i]).abs() < 1e-7);
        }
    }

    #[test]
    fn extreme_depth_stays_finite() {
        let cam = camera();
        let t = se3_exp([0.0, 0.02, 0.0, 0.0, 0.0, 0.1]);
        let p = [0.05, 0.05, 0.999];
        let direct = cam.ndc_se3_apply(&t, p).unwrap();
        assert!(direct.iter().all(|x: &f64| x.is_finite()));
        let oracle = cam
            .ndc_from_camera(t.apply(cam.camera_from_ndc(p)))
            .unwrap();
        for i in 0..3 {
            assert!((direct[i] - oracle[i]).abs() < 1e-6);
        }
    }

    #[test]
    fn camera_json_round_trip() {
        let cam = NdcCamera {
            fx: 100.0,
            fy: 90.0,
            width: 128.0,
            height: 96.0,
            near: 2.0,
            pose: se3_exp([0.1, 0.0, -0.2, 0.5, 0.0, 1.0]),
        };
        let s = serde_json::to_string(&cam).unwrap();
        assert!(s.contains("\"W\":128.0"));
        let back: NdcCamera = serde_json::from_str(&s).unwrap();
        assert_eq!(back.fx, cam.fx);
        assert!((back.pose.translation[2] - cam.pose.translation[2]).abs() < 1e-12);
    }
}
