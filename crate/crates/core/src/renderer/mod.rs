//! Differentiable renderers: the 2D deformable-image toy renderer and a
//! miniature volumetric renderer with flow and gauge-distance outputs.

pub mod flo;
pub mod flow;
pub mod toy2d;
pub mod volumetric;

use serde::{Deserialize, Serialize};

pub use flo::{read_flo, write_f32_plane, write_flo, FloError, FlowMap};
pub use flow::{render_flow, FlowParams, FlowRender, FlowVariant, DEFAULT_VALID_WEIGHT};
pub use volumetric::{
    composite, march, render_gauge_distance, render_ray, sample_depths, DepthSampling, Marched,
    RaySamples, RenderOutput,
};

/// A viewing ray at a fixed time.
#[derive(Clone, Debug)]
pub struct Ray {
    pub origin: [f64; 3],
    /// Unit direction.
    pub dir: [f64; 3],
    /// Source pixel the ray was cast through.
    pub pixel: [f64; 2],
    pub t: f64,
    pub near: f64,
    pub far: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq, Eq)]
pub struct SamplingSpec {
    pub samples_per_ray: usize,
    pub stratified: bool,
    pub rng_seed: u64,
}

impl Default for SamplingSpec {
    fn default() -> Self {
        SamplingSpec { samples_per_ray: 64, stratified: true, rng_seed: 0 }
    }
}

/// Deterministic uniform draw in [0, 1) from a (seed, ray, index) triple;
/// independent of evaluation order.
pub fn counter_uniform(seed: u64, ray_id: u64, k: u64) -> f64 {
    let mut x = seed ^ ray_id.wrapping_mul(0x9e3779b97f4a7c15) ^ k.wrapping_mul(0xd1b54a32d192ed03);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d049bb133111eb);
    x ^= x >> 31;
    (x >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}
