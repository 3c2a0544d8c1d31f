//! Miniature volumetric renderer: transmittance-weighted compositing of a
//! canonical radiance field observed through a backward warp.

use crate::diffcore::map::PointMap3;
use crate::fields::radiance::Radiance3;
use crate::real::Real;
use crate::renderer::{Ray, SamplingSpec};
use crate::transforms::camera::NdcCamera;

/// How sample depths are distributed along a ray.
#[derive(Clone, Copy, Debug, Default)]
pub enum DepthSampling<'c> {
    #[default]
    Euclidean,
    /// Uniform in NDC depth w.r.t. a camera whose center is the ray origin;
    /// concentrates samples near the camera for unbounded frontal scenes.
    NdcUniform(&'c NdcCamera),
}

#[derive(Clone, Debug)]
pub struct RaySamples {
    /// Distance along the ray per sample.
    pub zs: Vec<f64>,
    /// Quadrature interval per sample.
    pub deltas: Vec<f64>,
}

/// Sample depths, optionally stratified with a counter-based per-ray stream.
pub fn sample_depths(ray: &Ray, spec: &SamplingSpec, mode: DepthSampling<'_>, ray_id: u64) -> RaySamples {
    let n = spec.samples_per_ray.max(2);
    let jitter = |i: usize| -> f64 {
        if spec.stratified {
            crate::renderer::counter_uniform(spec.rng_seed, ray_id, i as u64)
        } else {
            0.5
        }
    };
    let zs: Vec<f64> = match mode {
        DepthSampling::Euclidean => (0..n)
            .map(|i| ray.near + (i as f64 + jitter(i)) / n as f64 * (ray.far - ray.near))
            .collect(),
        DepthSampling::NdcUniform(cam) => {
            // z_cam scales linearly with distance along the ray.
            let dz = ray.dir[2].abs().max(1e-9);
            let s_at = |lambda: f64| 1.0 - cam.near / (lambda * dz).max(cam.near);
            let (s0, s1) = (s_at(ray.near), s_at(ray.far));
            (0..n)
                .map(|i| {
                    let s = s0 + (i as f64 + jitter(i)) / n as f64 * (s1 - s0);
                    cam.near / ((1.0 - s) * dz)
                })
                .collect()
        }
    };
    let deltas: Vec<f64> = (0..n)
        .map(|i| if i + 1 < n { zs[i + 1] - zs[i] } else { (ray.far - zs[i]).max(1e-9) })
        .collect();
    RaySamples { zs, deltas }
}

/// Per-sample data shared by color, flow and gauge rendering.
pub struct Marched<S> {
    pub samples: RaySamples,
    /// World-space sample positions.
    pub positions: Vec<[f64; 3]>,
    /// Canonical-space warp outputs.
    pub canonical: Vec<[S; 3]>,
    pub colors: Vec<[S; 3]>,
    /// Transmittance-times-alpha compositing weights.
    pub weights: Vec<S>,
}

impl<S: Real> Marched<S> {
    pub fn opacity(&self) -> S {
        let mut o = S::zero();
        for w in &self.weights {
            o = o + *w;
        }
        o
    }
}

pub fn march<S, W, R>(warp: &W, rad: &R, ray: &Ray, samples: RaySamples) -> Marched<S>
where
    S: Real,
    W: PointMap3<S>,
    R: Radiance3<S>,
{
    let t = S::from_f64(ray.t);
    let dir = ray.dir.map(S::from_f64);
    let n = samples.zs.len();
    let mut positions = Vec::with_capacity(n);
    let mut canonical = Vec::with_capacity(n);
    let mut colors = Vec::with_capacity(n);
    let mut weights = Vec::with_capacity(n);
    let mut transmittance = S::one();
    for i in 0..n {
        let z = samples.zs[i];
        let p = [
            ray.origin[0] + z * ray.dir[0],
            ray.origin[1] + z * ray.dir[1],
            ray.origin[2] + z * ray.dir[2],
        ];
        let p_c = warp.eval(p.map(S::from_f64), t);
        let (c, sigma) = rad.query(p_c, dir, t);
        let alpha = S::one() - (-sigma * S::from_f64(samples.deltas[i])).exp();
        let w = transmittance * alpha;
        transmittance = transmittance * (S::one() - alpha);
        positions.push(p);
        canonical.push(p_c);
        colors.push(c);
        weights.push(w);
    }
    Marched { samples, positions, canonical, colors, weights }
}

/// Composited outputs of one ray.
pub struct RenderOutput<S> {
    pub color: [S; 3],
    /// Weighted mean distance along the ray (black-background convention:
    /// not renormalized by opacity).
    pub depth: S,
    pub opacity: S,
    pub weights: Vec<S>,
}

pub fn composite<S: Real>(m: &Marched<S>) -> RenderOutput<S> {
    let mut color = [S::zero(); 3];
    let mut depth = S::zero();
    for (i, w) in m.weights.iter().enumerate() {
        for c in 0..3 {
            color[c] = color[c] + *w * m.colors[i][c];
        }
        depth = depth + *w * S::from_f64(m.samples.zs[i]);
    }
    RenderOutput { color, depth, opacity: m.opacity(), weights: m.weights.clone() }
}

/// Sample, warp, query and composite one ray.
pub fn render_ray<S, W, R>(
    warp: &W,
    rad: &R,
    ray: &Ray,
    spec: &SamplingSpec,
    mode: DepthSampling<'_>,
    ray_id: u64,
) -> RenderOutput<S>
where
    S: Real,
    W: PointMap3<S>,
    R: Radiance3<S>,
{
    composite(&march(warp, rad, ray, sample_depths(ray, spec, mode, ray_id)))
}

/// Weight-averaged distance between each sample and its canonical image;
/// with the canonical frame pinned to an input frame this separates moving
/// content from static background.
pub fn render_gauge_distance<S: Real>(m: &Marched<S>) -> S {
    let mut acc = S::zero();
    for (i, w) in m.weights.iter().enumerate() {
        let p = m.positions[i];
        let q = m.canonical[i];
        let mut d2 = S::zero();
        for k in 0..3 {
            let d = S::from_f64(p[k]) - q[k];
            d2 = d2 + d * d;
        }
        acc = acc + *w * d2.sqrt();
    }
    acc
}
