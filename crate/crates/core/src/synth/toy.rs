//! Synthetic 2D video: textured patches moving rigidly over a black canvas,
//! rendered through the same deformable-image pipeline the fit uses, with
//! exact displacement flows.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diffcore::map::{spacetime_jet2, PointMap2, SpacetimeJet2};
use crate::fields::radiance::Grid2D;
use crate::real::Real;
use crate::renderer::flo::FlowMap;
use crate::renderer::toy2d;
use crate::training::data::{Dataset, FlowPair};
use crate::transforms::se2::SE2;

/// A rigid patch: local texture coordinates are centered, in pixels.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PatchSpec {
    pub size: usize,
    /// Canvas position of the patch center at the canonical time.
    pub center0: [f64; 2],
    pub angle0: f64,
    /// Linear velocity in pixels per unit time.
    pub vel: [f64; 2],
    /// Angular velocity in radians per unit time.
    pub omega: f64,
}

impl PatchSpec {
    /// Patch-local -> canvas pixels at time `t` (canonical time `t0`).
    pub fn pose<S: Real>(&self, t: S, t0: f64) -> SE2<S> {
        let dt = t - S::from_f64(t0);
        SE2::new(
            S::from_f64(self.angle0) + dt * S::from_f64(self.omega),
            [
                S::from_f64(self.center0[0]) + dt * S::from_f64(self.vel[0]),
                S::from_f64(self.center0[1]) + dt * S::from_f64(self.vel[1]),
            ],
        )
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ToySceneSpec {
    pub width: usize,
    pub height: usize,
    pub frames: usize,
    pub canonical_frame: usize,
    pub patches: Vec<PatchSpec>,
}

impl Default for ToySceneSpec {
    fn default() -> Self {
        // Two patches crossing most of the canvas with large spins; their
        // lanes are separated so they never overlap.
        ToySceneSpec {
            width: 96,
            height: 96,
            frames: 25,
            canonical_frame: 12,
            patches: vec![
                PatchSpec {
                    size: 24,
                    center0: [36.0, 26.0],
                    angle0: 0.3,
                    vel: [48.0, 6.0],
                    omega: 2.5,
                },
                PatchSpec {
                    size: 24,
                    center0: [60.0, 70.0],
                    angle0: -0.2,
                    vel: [-46.0, -6.0],
                    omega: -3.0,
                },
            ],
        }
    }
}

impl ToySceneSpec {
    pub fn time_of(&self, frame: usize) -> f64 {
        frame as f64 / (self.frames - 1) as f64
    }

    pub fn t0(&self) -> f64 {
        self.time_of(self.canonical_frame)
    }
}

/// The exact backward warp of the generated video, in normalized canvas
/// coordinates: patch regions map rigidly to their canonical pose,
/// background is the identity. Later patches sit on top.
#[derive(Clone)]
pub struct GtToyWarp {
    pub spec: ToySceneSpec,
}

impl GtToyWarp {
    fn to_px<S: Real>(&self, p: [S; 2]) -> [S; 2] {
        [
            (p[0] + S::one()) * S::from_f64(0.5 * self.spec.width as f64) - S::from_f64(0.5),
            (p[1] + S::one()) * S::from_f64(0.5 * self.spec.height as f64) - S::from_f64(0.5),
        ]
    }

    fn to_norm<S: Real>(&self, px: [S; 2]) -> [S; 2] {
        [
            (px[0] + S::from_f64(0.5)) * S::from_f64(2.0 / self.spec.width as f64) - S::one(),
            (px[1] + S::from_f64(0.5)) * S::from_f64(2.0 / self.spec.height as f64) - S::one(),
        ]
    }

    /// Topmost patch whose footprint contains the canvas pixel at time `t`.
    pub fn patch_at(&self, px: [f64; 2], t: f64) -> Option<usize> {
        let t0 = self.spec.t0();
        for (i, patch) in self.spec.patches.iter().enumerate().rev() {
            let local = patch.pose::<f64>(t, t0).inverse().apply(px);
            let half = patch.size as f64 * 0.5;
            // Half-open box: a size-n patch covers exactly n texel centers.
            if (-half..half).contains(&local[0]) && (-half..half).contains(&local[1]) {
                return Some(i);
            }
        }
        None
    }

    fn warp_px<S: Real>(&self, px: [S; 2], t: S) -> [S; 2] {
        let t0 = self.spec.t0();
        let prim = [px[0].primal(), px[1].primal()];
        match self.patch_at(prim, t.primal()) {
            Some(i) => {
                let patch = &self.spec.patches[i];
                let local = patch.pose::<S>(t, t0).inverse().apply(px);
                patch.pose::<S>(S::from_f64(t0), t0).apply(local)
            }
            None => px,
        }
    }

    /// Exact pixel displacement of the content at `px` between `t` and `t2`.
    pub fn flow_px(&self, px: [f64; 2], t: f64, t2: f64) -> [f64; 2] {
        let t0 = self.spec.t0();
        match self.patch_at(px, t) {
            Some(i) => {
                let patch = &self.spec.patches[i];
                let local = patch.pose::<f64>(t, t0).inverse().apply(px);
                let moved = patch.pose::<f64>(t2, t0).apply(local);
                [moved[0] - px[0], moved[1] - px[1]]
            }
            None => [0.0, 0.0],
        }
    }
}

impl<S: Real> PointMap2<S> for GtToyWarp {
    fn eval(&self, p: [S; 2], t: S) -> [S; 2] {
        self.to_norm(self.warp_px(self.to_px(p), t))
    }
    fn eval_jet(&self, p: [S; 2], t: S) -> SpacetimeJet2<S> {
        spacetime_jet2(p, t, |pj, tj| self.eval(pj, tj))
    }
}

/// Smooth random texture in [lo, 1]: white noise box-blurred twice.
fn gen_texture(size: usize, lo: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut tex: Vec<f64> = (0..size * size * 3).map(|_| rng.gen_range(0.0..1.0)).collect();
    for _ in 0..2 {
        let src = tex.clone();
        for y in 0..size {
            for x in 0..size {
                for c in 0..3 {
                    let mut acc = 0.0;
                    let mut n = 0.0;
                    for dy in -1i64..=1 {
                        for dx in -1i64..=1 {
                            let (sx, sy) = (x as i64 + dx, y as i64 + dy);
                            if sx >= 0 && sy >= 0 && sx < size as i64 && sy < size as i64 {
                                acc += src[((sy as usize * size) + sx as usize) * 3 + c];
                                n += 1.0;
                            }
                        }
                    }
                    tex[(y * size + x) * 3 + c] = acc / n;
                }
            }
        }
    }
    // Stretch contrast away from the black background.
    let (mut min, mut max) = (f64::MAX, f64::MIN);
    for v in &tex {
        min = min.min(*v);
        max = max.max(*v);
    }
    let span = (max - min).max(1e-9);
    for v in tex.iter_mut() {
        *v = lo + (1.0 - lo) * (*v - min) / span;
    }
    tex
}

/// Everything the generator knows: the dataset plus the exact warp and
/// canonical image behind it.
pub struct ToyGroundTruth {
    pub warp: GtToyWarp,
    pub canonical: Grid2D,
    /// Per flow pair, per pixel: true where the generated flow is reliable
    /// (stays on canvas and content is not covered at the target time).
    pub flow_valid: Vec<Vec<bool>>,
}

pub fn gen_toy_video(spec: &ToySceneSpec, seed: u64) -> (Dataset, ToyGroundTruth) {
    let (w, h) = (spec.width, spec.height);
    let warp = GtToyWarp { spec: spec.clone() };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // Canonical image: patches rasterized at their canonical pose.
    let textures: Vec<Vec<f64>> = spec.patches.iter().map(|p| gen_texture(p.size, 0.15, &mut rng)).collect();
    let t0 = spec.t0();
    let mut canonical = vec![0.0f64; w * h * 3];
    for y in 0..h {
        for x in 0..w {
            if let Some(i) = warp.patch_at([x as f64, y as f64], t0) {
                let patch = &spec.patches[i];
                let local = patch.pose::<f64>(t0, t0).inverse().apply([x as f64, y as f64]);
                let half = patch.size as f64 * 0.5;
                // Nearest-texel lookup keeps the canonical image crisp.
                let tx = ((local[0] + half).floor().clamp(0.0, patch.size as f64 - 1.0)) as usize;
                let ty = ((local[1] + half).floor().clamp(0.0, patch.size as f64 - 1.0)) as usize;
                let src = &textures[i][(ty * patch.size + tx) * 3..(ty * patch.size + tx) * 3 + 3];
                canonical[(y * w + x) * 3..(y * w + x) * 3 + 3].copy_from_slice(src);
            }
        }
    }
    let canonical = Grid2D::from_data(w, h, canonical);

    // Frames through the fitting renderer with the exact warp.
    let times: Vec<f64> = (0..spec.frames).map(|f| spec.time_of(f)).collect();
    let frames: Vec<Vec<f64>> = times
        .iter()
        .map(|&t| toy2d::render_frame(&warp, &canonical, w, h, t))
        .collect();

    // Exact flows for adjacent pairs, both directions.
    let mut flows = Vec::new();
    let mut flow_valid = Vec::new();
    for from in 0..spec.frames {
        for offset in [-1i64, 1] {
            let to = from as i64 + offset;
            if to < 0 || to >= spec.frames as i64 {
                continue;
            }
            let to = to as usize;
            let mut map = FlowMap::new(w, h);
            let mut valid = vec![false; w * h];
            for y in 0..h {
                for x in 0..w {
                    let f = warp.flow_px([x as f64, y as f64], times[from], times[to]);
                    map.set(x, y, [f[0] as f32, f[1] as f32]);
                    let tx = x as f64 + f[0];
                    let ty = y as f64 + f[1];
                    let on_canvas =
                        tx >= 0.0 && ty >= 0.0 && tx <= (w - 1) as f64 && ty <= (h - 1) as f64;
                    // Content is covered when the target lands on a
                    // different patch (or background gets covered).
                    let src_patch = warp.patch_at([x as f64, y as f64], times[from]);
                    let dst_patch = warp.patch_at([tx, ty], times[to]);
                    valid[y * w + x] = on_canvas && src_patch == dst_patch;
                }
            }
            flows.push(FlowPair { from, to, flow: map });
            flow_valid.push(valid);
        }
    }

    let dataset = Dataset {
        width: w,
        height: h,
        frames,
        times,
        cameras: Vec::new(),
        flows,
        near: 0.0,
        far: 0.0,
        scene_diameter: 2.0 * 2f64.sqrt(),
        gt_depth: None,
        dynamic_masks: None,
    };
    (dataset, ToyGroundTruth { warp, canonical, flow_valid })
}
