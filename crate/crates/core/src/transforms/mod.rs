//! Rigid transforms in 2D/3D, twist parameterizations, and camera models.

pub mod camera;
pub mod quat;
pub mod se2;
pub mod se3;

pub use camera::{CameraError, NdcCamera};
pub use quat::Quat;
pub use se2::{se2_apply, se2_exp, Twist3, SE2};
pub use se3::{se3_apply, se3_exp, SE3Json, Twist6, SE3};
