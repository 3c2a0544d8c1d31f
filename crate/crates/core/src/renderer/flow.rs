//! Optical flow rendered from the deformation field: every sample along a
//! ray is advected to the target time by velocity integration, the
//! rendering-weight expectation of the advected positions is projected with
//! the target camera, and the source pixel is subtracted.
//!
//! Masked samples (invalid velocity along their path) are excluded and the
//! expectation renormalizes over the remaining weight; a ray whose surviving
//! weight falls below a threshold reports a masked flow.

use crate::diffcore::map::PointMap3;
use crate::kinematics::{integrate_flow3, IntegrationConfig};
use crate::real::Real;
use crate::renderer::volumetric::Marched;
use crate::transforms::camera::NdcCamera;

/// Default minimum surviving weight for a flow to count.
pub const DEFAULT_VALID_WEIGHT: f64 = 0.5;

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum FlowVariant {
    /// Advect every sample, average advected positions by rendering weight,
    /// project once.
    Expected,
    /// Advect only the expected-depth surface point.
    SurfacePoint,
    /// Project every advected sample separately; the loss weights the
    /// per-sample residuals by the rendering weights.
    PerSample,
}

pub enum FlowRender<S> {
    Flow([S; 2]),
    /// Per-sample projected flows with their rendering weights.
    Samples(Vec<([S; 2], S)>),
    /// Too little valid weight (or projection failed).
    Masked,
}

impl<S: Real> FlowRender<S> {
    pub fn flow(&self) -> Option<[S; 2]> {
        match self {
            FlowRender::Flow(f) => Some(*f),
            _ => None,
        }
    }
}

pub struct FlowParams<'c> {
    pub dt: f64,
    pub cam_next: &'c NdcCamera,
    pub integration: IntegrationConfig,
    pub valid_weight_threshold: f64,
    pub variant: FlowVariant,
}

/// Render the flow of one marched ray. `pixel` is the source pixel of the
/// ray; `ray_id` keys the jitter stream.
pub fn render_flow<S, W>(
    warp: &W,
    m: &Marched<S>,
    pixel: [f64; 2],
    t: f64,
    params: &FlowParams<'_>,
    ray_id: u64,
) -> FlowRender<S>
where
    S: Real,
    W: PointMap3<S>,
{
    let ts = S::from_f64(t);
    match params.variant {
        FlowVariant::Expected | FlowVariant::PerSample => {
            let mut advected: Vec<Option<[S; 3]>> = Vec::with_capacity(m.positions.len());
            for (i, p) in m.positions.iter().enumerate() {
                let outcome = integrate_flow3(
                    warp,
                    p.map(S::from_f64),
                    ts,
                    params.dt,
                    &params.integration,
                    sample_stream(ray_id, i),
                );
                advected.push(outcome.point());
            }
            let mut valid_weight = S::zero();
            for (i, a) in advected.iter().enumerate() {
                if a.is_some() {
                    valid_weight = valid_weight + m.weights[i];
                }
            }
            if valid_weight.primal() < params.valid_weight_threshold {
                return FlowRender::Masked;
            }
            match params.variant {
                FlowVariant::Expected => {
                    let mut mean = [S::zero(); 3];
                    for (i, a) in advected.iter().enumerate() {
                        if let Some(q) = a {
                            for k in 0..3 {
                                mean[k] = mean[k] + m.weights[i] * q[k];
                            }
                        }
                    }
                    let inv = valid_weight.recip();
                    for k in 0..3 {
                        mean[k] = mean[k] * inv;
                    }
                    match params.cam_next.project_world(mean) {
                        Ok(px) => FlowRender::Flow([
                            px[0] - S::from_f64(pixel[0]),
                            px[1] - S::from_f64(pixel[1]),
                        ]),
                        Err(_) => FlowRender::Masked,
                    }
                }
                FlowVariant::PerSample => {
                    let mut out = Vec::new();
                    for (i, a) in advected.iter().enumerate() {
                        if let Some(q) = a {
                            if let Ok(px) = params.cam_next.project_world(*q) {
                                out.push((
                                    [px[0] - S::from_f64(pixel[0]), px[1] - S::from_f64(pixel[1])],
                                    m.weights[i],
                                ));
                            }
                        }
                    }
                    if out.is_empty() {
                        FlowRender::Masked
                    } else {
                        FlowRender::Samples(out)
                    }
                }
                FlowVariant::SurfacePoint => unreachable!(),
            }
        }
        FlowVariant::SurfacePoint => {
            let opacity = m.opacity();
            if opacity.primal() < params.valid_weight_threshold {
                return FlowRender::Masked;
            }
            // Expected-depth point on the visible surface.
            let mut zbar = S::zero();
            for (i, w) in m.weights.iter().enumerate() {
                zbar = zbar + *w * S::from_f64(m.samples.zs[i]);
            }
            zbar = zbar / opacity;
            let o = m.positions[0];
            let z0 = m.samples.zs[0];
            // positions[i] = origin + z_i * dir
            let dir = [
                (m.positions[1][0] - o[0]) / (m.samples.zs[1] - z0),
                (m.positions[1][1] - o[1]) / (m.samples.zs[1] - z0),
                (m.positions[1][2] - o[2]) / (m.samples.zs[1] - z0),
            ];
            let surf = [
                S::from_f64(o[0] - z0 * dir[0]) + zbar * S::from_f64(dir[0]),
                S::from_f64(o[1] - z0 * dir[1]) + zbar * S::from_f64(dir[1]),
                S::from_f64(o[2] - z0 * dir[2]) + zbar * S::from_f64(dir[2]),
            ];
            match integrate_flow3(warp, surf, ts, params.dt, &params.integration, sample_stream(ray_id, usize::MAX))
            {
                crate::kinematics::FlowOutcome::Advected(q) => match params.cam_next.project_world(q) {
                    Ok(px) => FlowRender::Flow([
                        px[0] - S::from_f64(pixel[0]),
                        px[1] - S::from_f64(pixel[1]),
                    ]),
                    Err(_) => FlowRender::Masked,
                },
                crate::kinematics::FlowOutcome::Masked { .. } => FlowRender::Masked,
            }
        }
    }
}

fn sample_stream(ray_id: u64, sample: usize) -> u64 {
    ray_id.wrapping_mul(0x100000001b3) ^ sample as u64
}
