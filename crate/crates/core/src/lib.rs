//! Flow-supervised fitting of deformable scene representations.
//!
//! A dynamic scene is modeled as a canonical template observed through a
//! backward warp `w(p; t) -> p_c`. The instantaneous velocity of the point
//! occupying `p` at time `t` follows from the warp's spatial Jacobian and
//! time derivative alone (`v = -J^-1 dw/dt`), so scene flow between frames
//! is obtained by integrating the velocity field without ever inverting the
//! warp. This crate provides:
//!
//! - [`diffcore`]: jets, a reverse-mode tape over parameter blocks, and the
//!   closed-form small-matrix inverses the velocity operator needs;
//! - [`transforms`]: quaternions, SE(2)/SE(3) with exponential coordinates,
//!   pinhole cameras, and SE(3) actions applied directly in NDC;
//! - [`fields`]: analytic and MLP backward warps plus canonical radiance
//!   fields (trainable image grids and MLPs);
//! - [`kinematics`]: the velocity operator, Runge-Kutta scene-flow
//!   integration and trajectory tracing;
//! - [`renderer`]: a 2D deformable-image renderer and a miniature
//!   volumetric renderer with optical-flow and gauge-distance outputs;
//! - [`training`]: losses, schedules, Adam, and the fitting loops;
//! - [`synth`]: synthetic data generators with exact ground truth, metrics
//!   and artifact emission.
//!
//! Core math is generic over the scalar type via [`real::Real`]; the
//! aliases below pin the concrete `f64` instantiations used throughout the
//! pipeline.

pub mod diffcore;
pub mod fields;
pub mod kinematics;
pub mod real;
pub mod renderer;
pub mod synth;
pub mod training;
pub mod transforms;

pub use real::Real;

/// Pipeline scalar. All fitting and rendering runs in 64-bit floats.
pub type F = f64;
/// Concrete 3-vector.
pub type Vec3 = [F; 3];
/// Concrete 2-vector.
pub type Vec2 = [F; 2];
/// Concrete 3x3 matrix.
pub type Mat3f = diffcore::Mat3<F>;
/// Concrete 2x2 matrix.
pub type Mat2f = diffcore::Mat2<F>;
/// Jet with the full 3 + 1 spacetime seed directions.
pub type Jet4f = diffcore::Jet<4, F>;
/// Jet with 2 + 1 seed directions for planar problems.
pub type Jet3f = diffcore::Jet<3, F>;
