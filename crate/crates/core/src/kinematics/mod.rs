//! Velocity from the backward warp, scene flow by time integration, and
//! trajectory tracing.
//!
//! The velocity of the material point occupying `p` at time `t` is
//! `v = -J^-1 dw/dt` where `J` is the warp's spatial Jacobian — no forward
//! warp is ever materialized. Points where `|det J|` falls below a threshold
//! are masked rather than erroring; masked samples carry zero velocity and
//! are excluded from losses downstream.

use rand::SeedableRng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::diffcore::map::{PointMap2, PointMap3};
use crate::real::Real;

pub const DEFAULT_EPS_DET: f64 = 1e-6;

#[derive(Copy, Clone, Debug)]
pub struct VelocityResult<S, const D: usize> {
    pub v: [S; D],
    pub det_j: S,
    pub valid: bool,
}

/// Unrolled Runge-Kutta configuration for scene-flow integration.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct IntegrationConfig {
    pub steps: u32,
    /// Relative std of the per-substep size noise; 0 disables jitter.
    pub jitter_sigma: f64,
    pub rng_seed: u64,
    pub eps_det: f64,
}

impl Default for IntegrationConfig {
    fn default() -> Self {
        IntegrationConfig { steps: 2, jitter_sigma: 0.0, rng_seed: 0, eps_det: DEFAULT_EPS_DET }
    }
}

impl IntegrationConfig {
    /// Substep durations: jittered multiplicatively, then renormalized so
    /// they sum to `dt` exactly. The noise stream is a pure function of
    /// `(seed, ray_id, step)`, so parallel execution order cannot change it.
    pub fn substeps(&self, dt: f64, ray_id: u64) -> Vec<f64> {
        let n = self.steps.max(1) as usize;
        let base = dt / n as f64;
        if self.jitter_sigma == 0.0 || dt == 0.0 {
            return vec![base; n];
        }
        let mut hs: Vec<f64> = (0..n)
            .map(|i| {
                let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(mix3(
                    self.rng_seed,
                    ray_id,
                    i as u64,
                ));
                let xi: f64 = StandardNormal.sample(&mut rng);
                base * (1.0 + self.jitter_sigma * xi).max(0.1)
            })
            .collect();
        let sum: f64 = hs.iter().sum();
        let k = dt / sum;
        for h in hs.iter_mut() {
            *h *= k;
        }
        hs
    }
}

fn mix3(a: u64, b: u64, c: u64) -> u64 {
    // splitmix64 over the packed triple
    let mut x = a ^ b.wrapping_mul(0x9e3779b97f4a7c15) ^ c.wrapping_mul(0xbf58476d1ce4e5b9);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d049bb133111eb);
    x ^ (x >> 31)
}

/// Outcome of a scene-flow integration.
#[derive(Copy, Clone, Debug)]
pub enum FlowOutcome<S, const D: usize> {
    Advected([S; D]),
    /// A velocity evaluation along the path was invalid.
    Masked { step: u32 },
}

impl<S: Real, const D: usize> FlowOutcome<S, D> {
    pub fn point(&self) -> Option<[S; D]> {
        match self {
            FlowOutcome::Advected(p) => Some(*p),
            FlowOutcome::Masked { .. } => None,
        }
    }
}

macro_rules! kinematics_impl {
    ($velocity:ident, $integrate:ident, $map:ident, $D:literal) => {
        /// `v = -J^-1 dw/dt`, masked when `|det J| < eps_det` or the field
        /// produced non-finite values.
        pub fn $velocity<S: Real, W: $map<S>>(
            field: &W,
            p: [S; $D],
            t: S,
            eps_det: f64,
        ) -> VelocityResult<S, $D> {
            let jet = field.eval_jet(p, t);
            let det = jet.jacobian.det();
            if !jet.is_finite() || det.primal().abs() < eps_det {
                return VelocityResult { v: [S::zero(); $D], det_j: det, valid: false };
            }
            let inv = jet.jacobian.inverse().expect("det checked above");
            let jv = inv.mul_vec(jet.dt);
            let mut v = [S::zero(); $D];
            for i in 0..$D {
                v[i] = -jv[i];
            }
            VelocityResult { v, det_j: det, valid: true }
        }

        /// Advect `p` from `t` to `t + dt` with unrolled RK4 substeps.
        pub fn $integrate<S: Real, W: $map<S>>(
            field: &W,
            p: [S; $D],
            t: S,
            dt: f64,
            cfg: &IntegrationConfig,
            ray_id: u64,
        ) -> FlowOutcome<S, $D> {
            if dt == 0.0 {
                return FlowOutcome::Advected(p);
            }
            let mut pos = p;
            let mut time = t;
            for (step, &h) in cfg.substeps(dt, ray_id).iter().enumerate() {
                let hs = S::from_f64(h);
                let half = S::from_f64(0.5 * h);
                let k1 = $velocity(field, pos, time, cfg.eps_det);
                if !k1.valid {
                    return FlowOutcome::Masked { step: step as u32 };
                }
                let mut p2 = pos;
                for i in 0..$D {
                    p2[i] = pos[i] + half * k1.v[i];
                }
                let t_half = time + half;
                let k2 = $velocity(field, p2, t_half, cfg.eps_det);
                if !k2.valid {
                    return FlowOutcome::Masked { step: step as u32 };
                }
                let mut p3 = pos;
                for i in 0..$D {
                    p3[i] = pos[i] + half * k2.v[i];
                }
                let k3 = $velocity(field, p3, t_half, cfg.eps_det);
                if !k3.valid {
                    return FlowOutcome::Masked { step: step as u32 };
                }
                let mut p4 = pos;
                for i in 0..$D {
                    p4[i] = pos[i] + hs * k3.v[i];
                }
                let t_end = time + hs;
                let k4 = $velocity(field, p4, t_end, cfg.eps_det);
                if !k4.valid {
                    return FlowOutcome::Masked { step: step as u32 };
                }
                let sixth = S::from_f64(h / 6.0);
                let two = S::from_f64(2.0);
                for i in 0..$D {
                    pos[i] = pos[i]
                        + sixth * (k1.v[i] + two * k2.v[i] + two * k3.v[i] + k4.v[i]);
                }
                time = t_end;
            }
            FlowOutcome::Advected(pos)
        }
    };
}

kinematics_impl!(velocity3, integrate_flow3, PointMap3, 3);
kinematics_impl!(velocity2, integrate_flow2, PointMap2, 2);

/// One traced point: position, time, and how far its canonical image has
/// drifted from the seed vertex's.
#[derive(Clone, Debug)]
pub struct TrajVertex {
    pub t: f64,
    pub p: [f64; 3],
    pub canonical_residual: f64,
}

#[derive(Clone, Debug)]
pub struct Trajectory {
    pub vertices: Vec<TrajVertex>,
    /// Index of the segment where integration was masked, if any.
    pub truncated: Option<usize>,
}

/// Chain [`integrate_flow3`] across consecutive times. The canonical
/// residual `|w(p_i; t_i) - w(p_0; t_0)|` is exactly zero for perfect
/// integration of an exact velocity field.
pub fn trace_trajectory<W: PointMap3<f64>>(
    field: &W,
    p0: [f64; 3],
    t0: f64,
    times: &[f64],
    cfg: &IntegrationConfig,
) -> Trajectory {
    assert!(times.windows(2).all(|w| w[0] <= w[1]), "times must be ordered");
    let canon0 = field.eval(p0, t0);
    let mut vertices = vec![TrajVertex { t: t0, p: p0, canonical_residual: 0.0 }];
    let mut p = p0;
    let mut t = t0;
    let mut truncated = None;
    for (i, &t_next) in times.iter().enumerate() {
        match integrate_flow3(field, p, t, t_next - t, cfg, i as u64) {
            FlowOutcome::Advected(pn) => {
                let canon = field.eval(pn, t_next);
                let mut r = 0.0;
                for k in 0..3 {
                    r += (canon[k] - canon0[k]).powi(2);
                }
                vertices.push(TrajVertex { t: t_next, p: pn, canonical_residual: r.sqrt() });
                p = pn;
                t = t_next;
            }
            FlowOutcome::Masked { .. } => {
                truncated = Some(i);
                break;
            }
        }
    }
    Trajectory { vertices, truncated }
}

/// CSV export: `traj_id,t,x,y,z,canonical_residual`.
pub fn trajectories_to_csv(trajectories: &[Trajectory]) -> String {
    let mut out = String::from("traj_id,t,x,y,z,canonical_residual\n");
    for (id, traj) in trajectories.iter().enumerate() {
        for v in &traj.vertices {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                id, v.t, v.p[0], v.p[1], v.p[2], v.canonical_residual
            ));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::map::{spacetime_jet3, SpacetimeJet3};
    use crate::fields::warp::{AffineWarp3, AnalyticWarp3, ShearSine3, Trajectory3};
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::FRAC_PI_2;

    #[test]
    fn translation_velocity() {
        let w = AnalyticWarp3::translation([1.0, 2.0, 3.0]);
        let r = velocity3(&w, [0.2, 0.4, -0.1], 0.7, DEFAULT_EPS_DET);
        assert!(r.valid);
        assert!((r.det_j - 1.0).abs() < 1e-12);
        for (a, b) in r.v.iter().zip(&[1.0, 2.0, 3.0]) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn rotation_velocity_is_omega_cross_p() {
        let w = AnalyticWarp3::rotation_z(FRAC_PI_2);
        let r = velocity3(&w, [1.0, 0.0, 0.0], 0.0, DEFAULT_EPS_DET);
        assert!(r.valid);
        assert!(r.v[0].abs() < 1e-12);
        assert!((r.v[1] - FRAC_PI_2).abs() < 1e-12);
        assert!(r.v[2].abs() < 1e-12);
    }

    #[test]
    fn scaling_velocity() {
        let w = AnalyticWarp3::Affine(AffineWarp3::scaling());
        let r = velocity3(&w, [2.0, 0.0, 0.0], 0.0, DEFAULT_EPS_DET);
        assert!(r.valid);
        assert!((r.v[0] + 2.0).abs() < 1e-12);
        assert!(r.v[1].abs() < 1e-12);
    }

    #[test]
    fn velocity_matches_forward_oracle_on_analytic_suite() {
        let warps = vec![
            AnalyticWarp3::translation([0.5, -1.0, 0.3]),
            AnalyticWarp3::rotation_z(1.3),
            AnalyticWarp3::screw_z(0.9, 0.4),
            AnalyticWarp3::Affine(AffineWarp3::scaling()),
            AnalyticWarp3::ShearSine(ShearSine3::default_test()),
        ];
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for w in &warps {
            for _ in 0..200 {
                let p: [f64; 3] = std::array::from_fn(|_| rng.gen_range(-1.5..1.5));
                let t = rng.gen_range(0.0..0.9);
                let r = velocity3(w, p, t, DEFAULT_EPS_DET);
                assert!(r.valid);
                let oracle = w.forward_velocity(p, t);
                let scale = oracle.iter().map(|x| x.abs()).fold(1e-9, f64::max);
                for i in 0..3 {
                    assert!(
                        (r.v[i] - oracle[i]).abs() <= 1e-9 * scale.max(1.0),
                        "{:?} at {:?}: {} vs {}",
                        w,
                        p,
                        r.v[i],
                        oracle[i]
                    );
                }
            }
        }
    }

    #[test]
    fn constant_velocity_integrates_exactly() {
        let w = AnalyticWarp3::translation([1.0, 0.0, 0.0]);
        let cfg = IntegrationConfig::default();
        match integrate_flow3(&w, [0.0, 0.0, 0.0], 0.0, 0.5, &cfg, 0) {
            FlowOutcome::Advected(p) => {
                assert!((p[0] - 0.5).abs() < 1e-15);
                assert_eq!(p[1], 0.0);
            }
            _ => panic!("masked"),
        }
    }

    #[test]
    fn zero_dt_is_identity() {
        let w = AnalyticWarp3::rotation_z(2.0);
        let p0 = [0.3, 0.4, 0.5];
        match integrate_flow3(&w, p0, 0.2, 0.0, &IntegrationConfig::default(), 0) {
            FlowOutcome::Advected(p) => assert_eq!(p, p0),
            _ => panic!("masked"),
        }
    }

    #[test]
    fn rotation_integrates_to_rotated_point() {
        let w = AnalyticWarp3::rotation_z(FRAC_PI_2);
        let cfg = IntegrationConfig::default();
        match integrate_flow3(&w, [1.0, 0.0, 0.0], 0.0, 0.2, &cfg, 0) {
            FlowOutcome::Advected(p) => {
                // Two RK4 substeps leave a 1.6e-6 truncation error here
                // (theta^5 / 120 per substep at theta = 0.05 pi).
                let ang = FRAC_PI_2 * 0.2;
                assert!((p[0] - ang.cos()).abs() < 2e-6);
                assert!((p[1] - ang.sin()).abs() < 2e-6);
                assert!((p[1] - ang.sin()).abs() > 1e-7, "error should be RK4-limited");
            }
            _ => panic!("masked"),
        }
    }

    #[test]
    fn rk4_beats_order_three_under_halving() {
        let w = AnalyticWarp3::ShearSine(ShearSine3::default_test());
        let p = [0.4, -0.3, 0.2];
        let (t, dt) = (0.1, 0.6);
        let canon0 = w.warp(p, t);
        let resid = |steps: u32| -> f64 {
            let cfg = IntegrationConfig { steps, ..Default::default() };
            let adv = integrate_flow3(&w, p, t, dt, &cfg, 0).point().unwrap();
            let canon = w.warp(adv, t + dt);
            (0..3).map(|i| (canon[i] - canon0[i]).powi(2)).sum::<f64>().sqrt()
        };
        let r1 = resid(2);
        let r2 = resid(4);
        let r4 = resid(8);
        let order1 = (r1 / r2).log2();
        let order2 = (r2 / r4).log2();
        assert!(order1 > 3.7 && order2 > 3.7, "orders {order1} {order2}");
    }

    /// Warp whose Jacobian determinant vanishes on the plane x = 0.
    struct SquashWarp;
    impl<S: Real> crate::diffcore::map::PointMap3<S> for SquashWarp {
        fn eval(&self, p: [S; 3], t: S) -> [S; 3] {
            [p[0] * p[0] * S::from_f64(0.5) + t, p[1], p[2]]
        }
        fn eval_jet(&self, p: [S; 3], t: S) -> SpacetimeJet3<S> {
            spacetime_jet3(p, t, |pj, tj| self.eval(pj, tj))
        }
    }

    #[test]
    fn singular_plane_is_masked() {
        let w = SquashWarp;
        let on_plane = velocity3(&w, [0.0, 0.5, 0.5], 0.3, DEFAULT_EPS_DET);
        assert!(!on_plane.valid);
        assert_eq!(on_plane.v, [0.0; 3]);
        let off_plane = velocity3(&w, [1.0, 0.5, 0.5], 0.3, DEFAULT_EPS_DET);
        assert!(off_plane.valid);
        // Masked integration reports the failing step.
        match integrate_flow3(&w, [0.0, 0.0, 0.0], 0.0, 0.5, &IntegrationConfig::default(), 0) {
            FlowOutcome::Masked { step } => assert_eq!(step, 0),
            _ => panic!("expected mask"),
        }
    }

    #[test]
    fn jitter_is_reproducible_and_renormalized() {
        let cfg = IntegrationConfig { steps: 4, jitter_sigma: 0.2, rng_seed: 7, ..Default::default() };
        let a = cfg.substeps(0.8, 42);
        let b = cfg.substeps(0.8, 42);
        assert_eq!(a, b);
        let c = cfg.substeps(0.8, 43);
        assert_ne!(a, c);
        assert!((a.iter().sum::<f64>() - 0.8).abs() < 1e-15);
        // Negative intervals renormalize to the same (negative) total.
        let d = cfg.substeps(-0.8, 42);
        assert!((d.iter().sum::<f64>() + 0.8).abs() < 1e-15);
    }

    #[test]
    fn trajectory_of_static_field_is_constant() {
        let w = AnalyticWarp3::translation([0.0, 0.0, 0.0]);
        let times: Vec<f64> = (1..10).map(|i| i as f64 * 0.1).collect();
        let traj = trace_trajectory(&w, [0.3, 0.2, 0.1], 0.0, &times, &IntegrationConfig::default());
        assert!(traj.truncated.is_none());
        for v in &traj.vertices {
            assert!((v.p[0] - 0.3).abs() < 1e-12);
            assert!(v.canonical_residual < 1e-12);
        }
    }

    #[test]
    fn rigid_trajectory_keeps_canonical_residual_small() {
        let w = AnalyticWarp3::Rigid(Trajectory3::Screw {
            twist: [0.5, -0.2, 0.9, 0.6, 0.1, -0.3],
            t0: 0.0,
        });
        let times: Vec<f64> = (1..=25).map(|i| i as f64 / 25.0).collect();
        let traj = trace_trajectory(&w, [1.0, 0.5, -0.2], 0.0, &times, &IntegrationConfig::default());
        assert!(traj.truncated.is_none());
        assert_eq!(traj.vertices.len(), 26);
        let max_resid = traj
            .vertices
            .iter()
            .map(|v| v.canonical_residual)
            .fold(0.0, f64::max);
        assert!(max_resid <= 1e-5, "max residual {max_resid}");
    }

    #[test]
    fn translation_trace_has_equally_spaced_vertices() {
        let w = AnalyticWarp3::translation([2.0, 0.0, 0.0]);
        let times: Vec<f64> = (1..=5).map(|i| i as f64 * 0.1).collect();
        let traj = trace_trajectory(&w, [0.0; 3], 0.0, &times, &IntegrationConfig::default());
        for pair in traj.vertices.windows(2) {
            let dx = pair[1].p[0] - pair[0].p[0];
            assert!((dx - 0.2).abs() < 1e-9);
        }
    }

    #[test]
    fn csv_export_shape() {
        let w = AnalyticWarp3::translation([1.0, 0.0, 0.0]);
        let traj = trace_trajectory(&w, [0.0; 3], 0.0, &[0.5], &IntegrationConfig::default());
        let csv = trajectories_to_csv(&[traj]);
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), "traj_id,t,x,y,z,canonical_residual");
        assert_eq!(csv.lines().count(), 3);
    }

    #[test]
    fn velocity_gradients_flow_through_tape() {
        use crate::diffcore::tape::{Tape, Var};
        // d/dp of a velocity-based loss against finite differences, with the
        // warp evaluated through tape scalars.
        let w = AnalyticWarp3::ShearSine(ShearSine3::default_test());
        let p0 = [0.3, -0.1, 0.4];
        let t0 = 0.35;
        let loss_at = |p: [f64; 3]| -> f64 {
            let r = velocity3(&w, p, t0, DEFAULT_EPS_DET);
            r.v.iter().map(|v| v * v).sum()
        };
        let tape = Tape::new();
        let p: [Var; 3] = p0.map(|v| tape.input(v));
        let r = velocity3(&w, p, Var::Const(t0), DEFAULT_EPS_DET);
        assert!(r.valid);
        let mut loss = Var::Const(0.0);
        for v in r.v {
            loss = loss + v * v;
        }
        let grads = tape.param_gradient(loss).unwrap();
        let h = 1e-6;
        for i in 0..3 {
            let mut pp = p0;
            pp[i] += h;
            let mut pm = p0;
            pm[i] -= h;
            let fd = (loss_at(pp) - loss_at(pm)) / (2.0 * h);
            assert!(
                (grads.wrt(p[i]) - fd).abs() <= 1e-6 * fd.abs().max(1.0),
                "{} vs {}",
                grads.wrt(p[i]),
                fd
            );
        }
    }
}
