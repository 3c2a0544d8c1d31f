//! Losses and the forward-backward flow consistency mask.

use crate::diffcore::map::{PointMap2, PointMap3};
use crate::real::Real;
use crate::renderer::flo::FlowMap;

/// Mean squared error over supervised pixels (mean over pixels and
/// channels).
pub fn photometric_loss<S: Real>(rendered: &[[S; 3]], target: &[[f64; 3]]) -> S {
    assert_eq!(rendered.len(), target.len());
    if rendered.is_empty() {
        return S::zero();
    }
    let mut acc = S::zero();
    for (r, t) in rendered.iter().zip(target) {
        for c in 0..3 {
            let d = r[c] - S::from_f64(t[c]);
            acc = acc + d * d;
        }
    }
    acc * S::from_f64(1.0 / (3.0 * rendered.len() as f64))
}

/// Masked mean L1 over flow components. The mean runs over mask-true
/// entries; rays whose rendered flow is masked contribute zero.
pub fn flow_loss<S: Real>(rendered: &[Option<[S; 2]>], target: &[[f64; 2]], mask: &[bool]) -> S {
    assert_eq!(rendered.len(), target.len());
    assert_eq!(rendered.len(), mask.len());
    let n_masked = mask.iter().filter(|m| **m).count();
    if n_masked == 0 {
        return S::zero();
    }
    let mut acc = S::zero();
    for i in 0..rendered.len() {
        if !mask[i] {
            continue;
        }
        if let Some(f) = &rendered[i] {
            acc = acc + (f[0] - S::from_f64(target[i][0])).abs()
                + (f[1] - S::from_f64(target[i][1])).abs();
        }
    }
    acc * S::from_f64(1.0 / (2.0 * n_masked as f64))
}

/// Per-sample flow loss: rendering weights scale each sample's L1 residual,
/// summed along the ray and averaged over mask-true rays.
pub fn flow_loss_per_sample<S: Real>(
    rendered: &[Option<Vec<([S; 2], S)>>],
    target: &[[f64; 2]],
    mask: &[bool],
) -> S {
    let n_masked = mask.iter().filter(|m| **m).count();
    if n_masked == 0 {
        return S::zero();
    }
    let mut acc = S::zero();
    for i in 0..rendered.len() {
        if !mask[i] {
            continue;
        }
        if let Some(samples) = &rendered[i] {
            for (f, w) in samples {
                acc = acc
                    + *w
                        * ((f[0] - S::from_f64(target[i][0])).abs()
                            + (f[1] - S::from_f64(target[i][1])).abs());
            }
        }
    }
    acc * S::from_f64(1.0 / (2.0 * n_masked as f64))
}

/// Mean deformation magnitude at the canonical time: pins the canonical
/// space to frame `t0` and removes the re-deformation ambiguity.
pub fn gauge_loss3<S: Real, W: PointMap3<S>>(warp: &W, points: &[[f64; 3]], t0: f64) -> S {
    if points.is_empty() {
        return S::zero();
    }
    let t = S::from_f64(t0);
    let mut acc = S::zero();
    for p in points {
        let q = warp.eval(p.map(S::from_f64), t);
        let mut d2 = S::zero();
        for k in 0..3 {
            let d = q[k] - S::from_f64(p[k]);
            d2 = d2 + d * d;
        }
        acc = acc + d2.sqrt();
    }
    acc * S::from_f64(1.0 / points.len() as f64)
}

pub fn gauge_loss2<S: Real, W: PointMap2<S>>(warp: &W, points: &[[f64; 2]], t0: f64) -> S {
    if points.is_empty() {
        return S::zero();
    }
    let t = S::from_f64(t0);
    let mut acc = S::zero();
    for p in points {
        let q = warp.eval(p.map(S::from_f64), t);
        let mut d2 = S::zero();
        for k in 0..2 {
            let d = q[k] - S::from_f64(p[k]);
            d2 = d2 + d * d;
        }
        acc = acc + d2.sqrt();
    }
    acc * S::from_f64(1.0 / points.len() as f64)
}

/// Per-pixel outcome of the forward-backward consistency test for one
/// ordered frame pair.
#[derive(Clone, Debug)]
pub struct ConsistencyMask {
    pub width: usize,
    pub height: usize,
    pub mask: Vec<bool>,
    pub tau_fb: f64,
}

impl ConsistencyMask {
    pub fn at(&self, x: usize, y: usize) -> bool {
        self.mask[y * self.width + x]
    }

    pub fn pass_count(&self) -> usize {
        self.mask.iter().filter(|m| **m).count()
    }
}

/// A pixel passes when following the forward flow and looking up the
/// backward flow returns within `tau_fb` pixels; landing off-image fails.
pub fn consistency_mask(flow_fwd: &FlowMap, flow_bwd: &FlowMap, tau_fb: f64) -> ConsistencyMask {
    let (w, h) = (flow_fwd.width, flow_fwd.height);
    let mut mask = vec![false; w * h];
    for y in 0..h {
        for x in 0..w {
            let f = flow_fwd.at(x, y);
            let tx = x as f64 + f[0] as f64;
            let ty = y as f64 + f[1] as f64;
            if let Some(b) = flow_bwd.sample(tx, ty) {
                let rx = f[0] as f64 + b[0];
                let ry = f[1] as f64 + b[1];
                mask[y * w + x] = (rx * rx + ry * ry).sqrt() <= tau_fb;
            }
        }
    }
    ConsistencyMask { width: w, height: h, mask, tau_fb }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::warp::AnalyticWarp3;

    #[test]
    fn photometric_identical_is_zero_and_offset_is_squared() {
        let a = vec![[0.2f64, 0.4, 0.6]; 10];
        let t = vec![[0.2f64, 0.4, 0.6]; 10];
        assert_eq!(photometric_loss(&a, &t), 0.0);
        let b: Vec<[f64; 3]> = t.iter().map(|p| [p[0] + 0.1, p[1] + 0.1, p[2] + 0.1]).collect();
        assert!((photometric_loss(&b, &t) - 0.01).abs() < 1e-12);
    }

    #[test]
    fn photometric_matches_direct_summation() {
        let rendered: Vec<[f64; 3]> = (0..17)
            .map(|i| [0.1 * i as f64 % 1.0, 0.37 * i as f64 % 1.0, 0.71 * i as f64 % 1.0])
            .collect();
        let target: Vec<[f64; 3]> = (0..17)
            .map(|i| [0.13 * i as f64 % 1.0, 0.29 * i as f64 % 1.0, 0.61 * i as f64 % 1.0])
            .collect();
        let mut oracle = 0.0;
        for (r, t) in rendered.iter().zip(&target) {
            for c in 0..3 {
                oracle += (r[c] - t[c]).powi(2);
            }
        }
        oracle /= 3.0 * 17.0;
        assert!((photometric_loss(&rendered, &target) - oracle).abs() <= 1e-12);
    }

    #[test]
    fn flow_loss_semantics() {
        let n = 8;
        let target = vec![[0.0f64, 0.0]; n];
        let equal: Vec<Option<[f64; 2]>> = vec![Some([0.0, 0.0]); n];
        assert_eq!(flow_loss(&equal, &target, &vec![true; n]), 0.0);
        // Mask all false: zero regardless of flows.
        let wild: Vec<Option<[f64; 2]>> = vec![Some([100.0, -3.0]); n];
        assert_eq!(flow_loss(&wild, &target, &vec![false; n]), 0.0);
        // Unit-u offset on half the pixels, full mask: 0.25.
        let half: Vec<Option<[f64; 2]>> = (0..n)
            .map(|i| Some(if i < n / 2 { [1.0, 0.0] } else { [0.0, 0.0] }))
            .collect();
        assert!((flow_loss(&half, &target, &vec![true; n]) - 0.25).abs() < 1e-12);
    }

    #[test]
    fn masked_ray_contributes_zero_without_changing_others() {
        let target = vec![[0.0f64, 0.0]; 4];
        let mask = vec![true; 4];
        let with: Vec<Option<[f64; 2]>> =
            vec![Some([1.0, 0.0]), Some([2.0, 0.0]), Some([0.5, 0.5]), Some([0.0, 1.0])];
        let without: Vec<Option<[f64; 2]>> =
            vec![Some([1.0, 0.0]), None, Some([0.5, 0.5]), Some([0.0, 1.0])];
        let a = flow_loss(&with, &target, &mask);
        let b = flow_loss(&without, &target, &mask);
        assert!((a - b - 2.0 / 8.0).abs() < 1e-12);
    }

    #[test]
    fn gauge_loss_examples() {
        let identity = AnalyticWarp3::translation([0.0; 3]);
        let pts: Vec<[f64; 3]> = (0..20).map(|i| [0.1 * i as f64, -0.05 * i as f64, 0.3]).collect();
        assert_eq!(gauge_loss3::<f64, _>(&identity, &pts, 0.5), 0.0);
        // Uniform translation by d at t0: loss is |d|.
        let d = [0.3, -0.4, 1.2];
        // Backward warp w = p - t u with u = -d/t0 gives w(p; t0) = p + d.
        let t0 = 0.5;
        let shifted = AnalyticWarp3::translation([-d[0] / t0, -d[1] / t0, -d[2] / t0]);
        let norm = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
        let loss: f64 = gauge_loss3(&shifted, &pts, t0);
        assert!((loss - norm).abs() < 1e-12);
    }

    #[test]
    fn consistency_exact_inverse_flows_pass() {
        let (w, h) = (16, 12);
        let mut fwd = FlowMap::new(w, h);
        let mut bwd = FlowMap::new(w, h);
        for y in 0..h {
            for x in 0..w {
                fwd.set(x, y, [2.0, 1.0]);
                bwd.set(x, y, [-2.0, -1.0]);
            }
        }
        let m = consistency_mask(&fwd, &bwd, 1.0);
        // Interior pixels pass; the two right columns / bottom row leave the image.
        assert!(m.at(5, 5));
        assert!(!m.at(w - 1, 5));
        assert!(!m.at(5, h - 1));
        let expect_pass = (w - 2) * (h - 1);
        assert_eq!(m.pass_count(), expect_pass);
    }

    #[test]
    fn constructed_occlusion_band_fails() {
        let (w, h) = (24, 8);
        let mut fwd = FlowMap::new(w, h);
        let mut bwd = FlowMap::new(w, h);
        for y in 0..h {
            for x in 0..w {
                // Forward: everything shifts right by 3.
                fwd.set(x, y, [3.0, 0.0]);
                // Backward is consistent except in a band occluded by new
                // content: columns 10..14 point somewhere else.
                if (10..14).contains(&x) {
                    bwd.set(x, y, [5.0, 2.0]);
                } else {
                    bwd.set(x, y, [-3.0, 0.0]);
                }
            }
        }
        let m = consistency_mask(&fwd, &bwd, 1.0);
        // Pixels whose target lands in the bad band fail.
        for y in 0..h {
            for x in 0..w {
                let lands_in_band = (10..14).contains(&(x + 3));
                let leaves = x + 3 >= w;
                assert_eq!(m.at(x, y), !lands_in_band && !leaves, "pixel {x},{y}");
            }
        }
    }
}
