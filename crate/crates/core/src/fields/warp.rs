//! Backward deformation fields: maps from a spacetime point `(p, t)` to its
//! canonical-space position.
//!
//! Analytic variants come with their exact forward maps, which serve as the
//! independent motion oracles everywhere velocities are validated. The MLP
//! variant follows the head structure `w(p; t) = exp(twist(p, code(t))) . p`
//! with a softplus trunk, zero-initialized final layer (identity warp at
//! start) and a small time-code network.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diffcore::jet::Jet;
use crate::diffcore::linalg::Mat3;
use crate::diffcore::map::{
    spacetime_jet2, spacetime_jet3, PointMap2, PointMap3, SpacetimeJet2, SpacetimeJet3,
};
use crate::diffcore::tape::{BlockId, Tape, Var};
use crate::fields::mlp::{Mlp, TapedMlp};
use crate::fields::posenc::{posenc, posenc_dim};
use crate::real::Real;
use crate::transforms::se2::{se2_exp, SE2};
use crate::transforms::se3::{se3_exp, SE3};

// ---------------------------------------------------------------------------
// Analytic trajectories
// ---------------------------------------------------------------------------

/// Pose of a rigidly moving frame over time; `pose(t0)` is the identity, so
/// the backward warp it induces is pinned to `t0`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub enum Trajectory3 {
    /// `exp((t - t0) twist)`: constant-velocity screw motion.
    Screw { twist: [f64; 6], t0: f64 },
    /// Screw motion about an anchor point.
    AnchoredScrew { twist: [f64; 6], anchor: [f64; 3], t0: f64 },
    /// Sinusoidal translation `amp * sin(omega (t - t0))`.
    Wave { amp: [f64; 3], omega: f64, t0: f64 },
}

impl Trajectory3 {
    pub fn pose<S: Real>(&self, t: S) -> SE3<S> {
        match *self {
            Trajectory3::Screw { twist, t0 } => {
                let s = t - S::from_f64(t0);
                se3_exp(twist.map(|x| S::from_f64(x) * s))
            }
            Trajectory3::AnchoredScrew { twist, anchor, t0 } => {
                let s = t - S::from_f64(t0);
                let m = se3_exp(twist.map(|x| S::from_f64(x) * s));
                let a = anchor.map(S::from_f64);
                let to = SE3::new(crate::transforms::quat::Quat::identity(), a);
                let back = SE3::new(
                    crate::transforms::quat::Quat::identity(),
                    [-a[0], -a[1], -a[2]],
                );
                to.compose(&m).compose(&back)
            }
            Trajectory3::Wave { amp, omega, t0 } => {
                let s = ((t - S::from_f64(t0)) * S::from_f64(omega)).sin();
                SE3::new(
                    crate::transforms::quat::Quat::identity(),
                    [
                        S::from_f64(amp[0]) * s,
                        S::from_f64(amp[1]) * s,
                        S::from_f64(amp[2]) * s,
                    ],
                )
            }
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub enum Trajectory2 {
    Screw { twist: [f64; 3], t0: f64 },
    AnchoredScrew { twist: [f64; 3], anchor: [f64; 2], t0: f64 },
}

impl Trajectory2 {
    pub fn pose<S: Real>(&self, t: S) -> SE2<S> {
        match *self {
            Trajectory2::Screw { twist, t0 } => {
                let s = t - S::from_f64(t0);
                se2_exp(twist.map(|x| S::from_f64(x) * s))
            }
            Trajectory2::AnchoredScrew { twist, anchor, t0 } => {
                let s = t - S::from_f64(t0);
                let m = se2_exp(twist.map(|x| S::from_f64(x) * s));
                let a = [S::from_f64(anchor[0]), S::from_f64(anchor[1])];
                let to = SE2::new(S::zero(), a);
                let back = SE2::new(S::zero(), [-a[0], -a[1]]);
                to.compose(&m).compose(&back)
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Analytic warps
// ---------------------------------------------------------------------------

/// Backward warp `w(p; t) = A(t) p + b(t)` with `A(t) = A0 + t A1`.
#[derive(Clone, Debug)]
pub struct AffineWarp3 {
    pub a0: Mat3<f64>,
    pub a1: Mat3<f64>,
    pub b0: [f64; 3],
    pub b1: [f64; 3],
}

impl AffineWarp3 {
    /// `w = (1 + t) p`, the canonical scaling example.
    pub fn scaling() -> Self {
        AffineWarp3 { a0: Mat3::identity(), a1: Mat3::identity(), b0: [0.0; 3], b1: [0.0; 3] }
    }

    fn mats<S: Real>(&self, t: S) -> (Mat3<S>, [S; 3]) {
        let mut a = Mat3::zeros();
        for i in 0..3 {
            for j in 0..3 {
                a.0[i][j] = S::from_f64(self.a0.0[i][j]) + t * S::from_f64(self.a1.0[i][j]);
            }
        }
        let b = [
            S::from_f64(self.b0[0]) + t * S::from_f64(self.b1[0]),
            S::from_f64(self.b0[1]) + t * S::from_f64(self.b1[1]),
            S::from_f64(self.b0[2]) + t * S::from_f64(self.b1[2]),
        ];
        (a, b)
    }
}

/// Smooth nonlinear diffeomorphism built from a strict triangular cycle of
/// sine shears; both directions are closed-form.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ShearSine3 {
    pub amp: [f64; 3],
    pub freq: [f64; 3],
    pub phase: [f64; 3],
    pub tfreq: [f64; 3],
    pub tphase: [f64; 3],
}

impl ShearSine3 {
    pub fn default_test() -> Self {
        ShearSine3 {
            amp: [0.23, 0.31, 0.27],
            freq: [1.3, 1.7, 1.1],
            phase: [0.2, 1.1, -0.4],
            tfreq: [1.9, 1.3, 2.3],
            tphase: [0.5, -0.7, 1.2],
        }
    }

    fn a<S: Real>(&self, i: usize, t: S) -> S {
        S::from_f64(self.amp[i]) * (S::from_f64(self.tfreq[i]) * t + S::from_f64(self.tphase[i])).sin()
    }
}

#[derive(Clone, Debug)]
pub enum AnalyticWarp3 {
    Rigid(Trajectory3),
    Affine(AffineWarp3),
    ShearSine(ShearSine3),
}

impl AnalyticWarp3 {
    /// Translation warp `w = p - t u`.
    pub fn translation(u: [f64; 3]) -> Self {
        AnalyticWarp3::Rigid(Trajectory3::Screw {
            twist: [0.0, 0.0, 0.0, u[0], u[1], u[2]],
            t0: 0.0,
        })
    }

    /// Rotation about the z axis at rate `omega`, i.e. `w = Rz(-omega t) p`.
    pub fn rotation_z(omega: f64) -> Self {
        AnalyticWarp3::Rigid(Trajectory3::Screw { twist: [0.0, 0.0, omega, 0.0, 0.0, 0.0], t0: 0.0 })
    }

    /// Screw motion: rotation about z plus translation along z.
    pub fn screw_z(omega: f64, pitch: f64) -> Self {
        AnalyticWarp3::Rigid(Trajectory3::Screw { twist: [0.0, 0.0, omega, 0.0, 0.0, pitch], t0: 0.0 })
    }

    pub fn warp<S: Real>(&self, p: [S; 3], t: S) -> [S; 3] {
        match self {
            AnalyticWarp3::Rigid(tr) => tr.pose(t).inverse().apply(p),
            AnalyticWarp3::Affine(a) => {
                let (m, b) = a.mats(t);
                let mp = m.mul_vec(p);
                [mp[0] + b[0], mp[1] + b[1], mp[2] + b[2]]
            }
            AnalyticWarp3::ShearSine(s) => {
                let qx = p[0]
                    - s.a(0, t) * (S::from_f64(s.freq[0]) * p[1] + S::from_f64(s.phase[0])).sin();
                let qy = p[1]
                    - s.a(1, t) * (S::from_f64(s.freq[1]) * p[2] + S::from_f64(s.phase[1])).sin();
                let qz = p[2]
                    - s.a(2, t) * (S::from_f64(s.freq[2]) * qx + S::from_f64(s.phase[2])).sin();
                [qx, qy, qz]
            }
        }
    }

    /// Exact forward map: position at time `t` of the material point whose
    /// canonical location is `q`.
    pub fn forward<S: Real>(&self, q: [S; 3], t: S) -> [S; 3] {
        match self {
            AnalyticWarp3::Rigid(tr) => tr.pose(t).apply(q),
            AnalyticWarp3::Affine(a) => {
                let (m, b) = a.mats(t);
                let rhs = [q[0] - b[0], q[1] - b[1], q[2] - b[2]];
                m.inverse().expect("affine warp must stay invertible").mul_vec(rhs)
            }
            AnalyticWarp3::ShearSine(s) => {
                let pz = q[2]
                    + s.a(2, t) * (S::from_f64(s.freq[2]) * q[0] + S::from_f64(s.phase[2])).sin();
                let py = q[1]
                    + s.a(1, t) * (S::from_f64(s.freq[1]) * pz + S::from_f64(s.phase[1])).sin();
                let px = q[0]
                    + s.a(0, t) * (S::from_f64(s.freq[0]) * py + S::from_f64(s.phase[0])).sin();
                [px, py, pz]
            }
        }
    }

    /// True velocity at `(p, t)`: the time derivative of the forward map,
    /// held at the material point currently at `p`.
    pub fn forward_velocity(&self, p: [f64; 3], t: f64) -> [f64; 3] {
        let q = self.warp(p, t);
        let qj = q.map(Jet::<1, f64>::constant);
        let tj = Jet::seeded(t, 0);
        let fwd = self.forward(qj, tj);
        [fwd[0].d[0], fwd[1].d[0], fwd[2].d[0]]
    }
}

impl<S: Real> PointMap3<S> for AnalyticWarp3 {
    fn eval(&self, p: [S; 3], t: S) -> [S; 3] {
        self.warp(p, t)
    }
    fn eval_jet(&self, p: [S; 3], t: S) -> SpacetimeJet3<S> {
        spacetime_jet3(p, t, |pj, tj| self.warp(pj, tj))
    }
}

#[derive(Clone, Debug)]
pub struct AffineWarp2 {
    pub a0: [[f64; 2]; 2],
    pub a1: [[f64; 2]; 2],
    pub b0: [f64; 2],
    pub b1: [f64; 2],
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ShearSine2 {
    pub amp: [f64; 2],
    pub freq: [f64; 2],
    pub phase: [f64; 2],
    pub tfreq: [f64; 2],
    pub tphase: [f64; 2],
}

impl ShearSine2 {
    pub fn default_test() -> Self {
        ShearSine2 {
            amp: [0.21, 0.33],
            freq: [1.4, 1.9],
            phase: [0.3, -0.8],
            tfreq: [2.1, 1.5],
            tphase: [0.4, 1.3],
        }
    }

    fn a<S: Real>(&self, i: usize, t: S) -> S {
        S::from_f64(self.amp[i]) * (S::from_f64(self.tfreq[i]) * t + S::from_f64(self.tphase[i])).sin()
    }
}

#[derive(Clone, Debug)]
pub enum AnalyticWarp2 {
    Rigid(Trajectory2),
    Affine(AffineWarp2),
    ShearSine(ShearSine2),
}

impl AnalyticWarp2 {
    pub fn translation(u: [f64; 2]) -> Self {
        AnalyticWarp2::Rigid(Trajectory2::Screw { twist: [0.0, u[0], u[1]], t0: 0.0 })
    }

    pub fn rotation(omega: f64) -> Self {
        AnalyticWarp2::Rigid(Trajectory2::Screw { twist: [omega, 0.0, 0.0], t0: 0.0 })
    }

    pub fn warp<S: Real>(&self, p: [S; 2], t: S) -> [S; 2] {
        match self {
            AnalyticWarp2::Rigid(tr) => tr.pose(t).inverse().apply(p),
            AnalyticWarp2::Affine(a) => {
                let m = |i: usize, j: usize| S::from_f64(a.a0[i][j]) + t * S::from_f64(a.a1[i][j]);
                let b = |i: usize| S::from_f64(a.b0[i]) + t * S::from_f64(a.b1[i]);
                [
                    m(0, 0) * p[0] + m(0, 1) * p[1] + b(0),
                    m(1, 0) * p[0] + m(1, 1) * p[1] + b(1),
                ]
            }
            AnalyticWarp2::ShearSine(s) => {
                let qx = p[0]
                    - s.a(0, t) * (S::from_f64(s.freq[0]) * p[1] + S::from_f64(s.phase[0])).sin();
                let qy = p[1]
                    - s.a(1, t) * (S::from_f64(s.freq[1]) * qx + S::from_f64(s.phase[1])).sin();
                [qx, qy]
            }
        }
    }

    pub fn forward<S: Real>(&self, q: [S; 2], t: S) -> [S; 2] {
        match self {
            AnalyticWarp2::Rigid(tr) => tr.pose(t).apply(q),
            AnalyticWarp2::Affine(a) => {
                let m = |i: usize, j: usize| S::from_f64(a.a0[i][j]) + t * S::from_f64(a.a1[i][j]);
                let b = |i: usize| S::from_f64(a.b0[i]) + t * S::from_f64(a.b1[i]);
                let det = m(0, 0) * m(1, 1) - m(0, 1) * m(1, 0);
                let rhs = [q[0] - b(0), q[1] - b(1)];
                [
                    (m(1, 1) * rhs[0] - m(0, 1) * rhs[1]) / det,
                    (m(0, 0) * rhs[1] - m(1, 0) * rhs[0]) / det,
                ]
            }
            AnalyticWarp2::ShearSine(s) => {
                let py = q[1]
                    + s.a(1, t) * (S::from_f64(s.freq[1]) * q[0] + S::from_f64(s.phase[1])).sin();
                let px = q[0]
                    + s.a(0, t) * (S::from_f64(s.freq[0]) * py + S::from_f64(s.phase[0])).sin();
                [px, py]
            }
        }
    }

    pub fn forward_velocity(&self, p: [f64; 2], t: f64) -> [f64; 2] {
        let q = self.warp(p, t);
        let qj = q.map(Jet::<1, f64>::constant);
        let tj = Jet::seeded(t, 0);
        let fwd = self.forward(qj, tj);
        [fwd[0].d[0], fwd[1].d[0]]
    }
}

impl<S: Real> PointMap2<S> for AnalyticWarp2 {
    fn eval(&self, p: [S; 2], t: S) -> [S; 2] {
        self.warp(p, t)
    }
    fn eval_jet(&self, p: [S; 2], t: S) -> SpacetimeJet2<S> {
        spacetime_jet2(p, t, |pj, tj| self.warp(pj, tj))
    }
}

// ---------------------------------------------------------------------------
// MLP warps
// ---------------------------------------------------------------------------

/// Architecture of a trainable warp: a twist-emitting trunk conditioned on a
/// learned time code, softplus activations throughout.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq, Eq)]
pub struct MlpWarpSpec {
    pub dim: usize,
    /// Weight layers in the trunk (the last one emits the twist).
    pub depth: usize,
    pub width: usize,
    pub pe_point: usize,
    pub pe_time: usize,
    pub code_dim: usize,
    pub code_depth: usize,
    pub code_width: usize,
}

impl MlpWarpSpec {
    pub fn desk(dim: usize) -> Self {
        MlpWarpSpec {
            dim,
            depth: 4,
            width: 64,
            pe_point: 6,
            pe_time: 4,
            code_dim: 8,
            code_depth: 2,
            code_width: 32,
        }
    }

    /// Full-size configuration (6x128 trunk).
    pub fn full(dim: usize) -> Self {
        MlpWarpSpec { depth: 6, width: 128, ..Self::desk(dim) }
    }

    fn twist_dim(&self) -> usize {
        match self.dim {
            2 => 3,
            3 => 6,
            d => panic!("unsupported warp dimension {d}"),
        }
    }

    fn trunk_dims(&self) -> Vec<usize> {
        let mut dims = vec![posenc_dim(self.dim, self.pe_point) + self.code_dim];
        dims.extend(std::iter::repeat(self.width).take(self.depth - 1));
        dims.push(self.twist_dim());
        dims
    }

    fn code_dims(&self) -> Vec<usize> {
        let mut dims = vec![posenc_dim(1, self.pe_time)];
        dims.extend(std::iter::repeat(self.code_width).take(self.code_depth - 1));
        dims.push(self.code_dim);
        dims
    }
}

macro_rules! mlp_warp_impl {
    ($name:ident, $dim:literal, $njet:literal, $se_exp:path, $twist_len:literal) => {
        #[derive(Clone, Debug)]
        pub struct $name {
            pub spec: MlpWarpSpec,
            pub trunk: Mlp,
            pub code: Mlp,
        }

        impl $name {
            pub fn new(spec: MlpWarpSpec, rng: &mut impl Rng) -> Self {
                assert_eq!(spec.dim, $dim);
                let mut trunk = Mlp::new(&spec.trunk_dims(), rng);
                trunk.zero_final();
                let code = Mlp::new(&spec.code_dims(), rng);
                $name { spec, trunk, code }
            }

            pub fn time_code(&self, t: f64) -> Vec<f64> {
                let mut tf = Vec::new();
                posenc(&[t], self.spec.pe_time, &mut tf);
                self.code.eval(&tf)
            }

            fn head<S: Real>(&self, xi: &[S], p: [S; $dim]) -> [S; $dim] {
                let mut twist = [S::zero(); $twist_len];
                twist.copy_from_slice(xi);
                $se_exp(twist).apply(p)
            }

            fn eval_f64(&self, p: [f64; $dim], t: f64) -> [f64; $dim] {
                let mut tf = Vec::new();
                posenc(&[t], self.spec.pe_time, &mut tf);
                let code = self.code.eval(&tf);
                let mut feats = Vec::new();
                posenc(&p, self.spec.pe_point, &mut feats);
                feats.extend(code);
                let xi = self.trunk.eval(&feats);
                self.head(&xi, p)
            }

            fn eval_jets(&self, p: [f64; $dim], t: f64) -> [Jet<$njet, f64>; $dim] {
                let pj: [Jet<$njet, f64>; $dim] = std::array::from_fn(|i| Jet::seeded(p[i], i));
                let tj: Jet<$njet, f64> = Jet::seeded(t, $dim);
                let mut tf = Vec::new();
                posenc(&[tj], self.spec.pe_time, &mut tf);
                let code = self.code.eval_jet(&tf);
                let mut feats = Vec::new();
                posenc(&pj, self.spec.pe_point, &mut feats);
                feats.extend(code);
                let xi = self.trunk.eval_jet(&feats);
                self.head(&xi, pj)
            }

            /// Parameter blocks in a fixed order: trunk layers then code
            /// layers, `(w, b)` per layer.
            pub fn block_sizes(&self) -> Vec<usize> {
                let mut s = self.trunk.block_sizes();
                s.extend(self.code.block_sizes());
                s
            }

            pub fn flat_params(&self) -> Vec<Vec<f64>> {
                let mut p = self.trunk.flat_params();
                p.extend(self.code.flat_params());
                p
            }

            pub fn load_flat_params(&mut self, blocks: &[Vec<f64>]) {
                let nt = 2 * self.trunk.layers.len();
                self.trunk.load_flat_params(&blocks[..nt]);
                self.code.load_flat_params(&blocks[nt..]);
            }
        }
    };
}

mlp_warp_impl!(MlpWarp3, 3, 4, se3_exp, 6);
mlp_warp_impl!(MlpWarp2, 2, 3, se2_exp, 3);

impl PointMap3<f64> for MlpWarp3 {
    fn eval(&self, p: [f64; 3], t: f64) -> [f64; 3] {
        self.eval_f64(p, t)
    }
    fn eval_jet(&self, p: [f64; 3], t: f64) -> SpacetimeJet3<f64> {
        let w = self.eval_jets(p, t);
        let mut jac = Mat3::zeros();
        let mut value = [0.0; 3];
        let mut dt = [0.0; 3];
        for i in 0..3 {
            value[i] = w[i].v;
            dt[i] = w[i].d[3];
            for j in 0..3 {
                jac.0[i][j] = w[i].d[j];
            }
        }
        SpacetimeJet3 { value, jacobian: jac, dt }
    }
}

impl PointMap2<f64> for MlpWarp2 {
    fn eval(&self, p: [f64; 2], t: f64) -> [f64; 2] {
        self.eval_f64(p, t)
    }
    fn eval_jet(&self, p: [f64; 2], t: f64) -> SpacetimeJet2<f64> {
        let w = self.eval_jets(p, t);
        let mut jac = crate::diffcore::linalg::Mat2::zeros();
        let mut value = [0.0; 2];
        let mut dt = [0.0; 2];
        for i in 0..2 {
            value[i] = w[i].v;
            dt[i] = w[i].d[2];
            for j in 0..2 {
                jac.0[i][j] = w[i].d[j];
            }
        }
        SpacetimeJet2 { value, jacobian: jac, dt }
    }
}

// ---------------------------------------------------------------------------
// Warp field enums and taped wrappers
// ---------------------------------------------------------------------------

#[derive(Clone, Debug)]
pub enum WarpField3 {
    Analytic(AnalyticWarp3),
    Mlp(MlpWarp3),
}

#[derive(Clone, Debug)]
pub enum WarpField2 {
    Analytic(AnalyticWarp2),
    Mlp(MlpWarp2),
}

impl PointMap3<f64> for WarpField3 {
    fn eval(&self, p: [f64; 3], t: f64) -> [f64; 3] {
        match self {
            WarpField3::Analytic(a) => a.eval(p, t),
            WarpField3::Mlp(m) => m.eval(p, t),
        }
    }
    fn eval_jet(&self, p: [f64; 3], t: f64) -> SpacetimeJet3<f64> {
        match self {
            WarpField3::Analytic(a) => a.eval_jet(p, t),
            WarpField3::Mlp(m) => m.eval_jet(p, t),
        }
    }
}

impl PointMap2<f64> for WarpField2 {
    fn eval(&self, p: [f64; 2], t: f64) -> [f64; 2] {
        match self {
            WarpField2::Analytic(a) => a.eval(p, t),
            WarpField2::Mlp(m) => m.eval(p, t),
        }
    }
    fn eval_jet(&self, p: [f64; 2], t: f64) -> SpacetimeJet2<f64> {
        match self {
            WarpField2::Analytic(a) => a.eval_jet(p, t),
            WarpField2::Mlp(m) => m.eval_jet(p, t),
        }
    }
}

/// Warp-network parameter block ids on some tape: trunk then code, in
/// registration order.
#[derive(Clone, Debug)]
pub struct WarpBlocks {
    pub trunk: Vec<(BlockId, BlockId)>,
    pub code: Vec<(BlockId, BlockId)>,
}

pub fn pair_blocks(first: BlockId, n_layers: usize) -> Vec<(BlockId, BlockId)> {
    (0..n_layers as u32).map(|i| (first + 2 * i, first + 2 * i + 1)).collect()
}

impl WarpBlocks {
    /// Assign ids for a warp whose first block is `first`.
    pub fn assign(first: BlockId, trunk_layers: usize, code_layers: usize) -> WarpBlocks {
        let trunk = pair_blocks(first, trunk_layers);
        let code = pair_blocks(first + 2 * trunk_layers as u32, code_layers);
        WarpBlocks { trunk, code }
    }
}

macro_rules! taped_warp_impl {
    ($taped:ident, $warp:ident, $dim:literal, $njet:literal) => {
        /// A trainable warp bound to a tape; evaluations record fused ops.
        #[derive(Clone, Copy)]
        pub struct $taped<'a, 't> {
            pub warp: &'a $warp,
            pub tape: &'t Tape,
            pub blocks: &'a WarpBlocks,
        }

        impl<'a, 't> $taped<'a, 't> {
            fn trunk(&self) -> TapedMlp<'a> {
                TapedMlp { mlp: &self.warp.trunk, blocks: &self.blocks.trunk }
            }
            fn code(&self) -> TapedMlp<'a> {
                TapedMlp { mlp: &self.warp.code, blocks: &self.blocks.code }
            }

            fn eval_plain(&self, p: [Var<'t>; $dim], t: Var<'t>) -> [Var<'t>; $dim] {
                let mut tf = Vec::new();
                posenc(&[t], self.warp.spec.pe_time, &mut tf);
                let code = self.code().eval(self.tape, &tf);
                let mut feats = Vec::new();
                posenc(&p, self.warp.spec.pe_point, &mut feats);
                feats.extend(code);
                let xi = self.trunk().eval(self.tape, &feats);
                self.warp.head(&xi, p)
            }

            fn eval_jet_vars(
                &self,
                p: [Jet<$njet, Var<'t>>; $dim],
                t: Jet<$njet, Var<'t>>,
            ) -> [Jet<$njet, Var<'t>>; $dim] {
                let mut tf = Vec::new();
                posenc(&[t], self.warp.spec.pe_time, &mut tf);
                let code = self.code().eval_jet::<$njet>(self.tape, &tf);
                let mut feats = Vec::new();
                posenc(&p, self.warp.spec.pe_point, &mut feats);
                feats.extend(code);
                let xi = self.trunk().eval_jet::<$njet>(self.tape, &feats);
                self.warp.head(&xi, p)
            }
        }
    };
}

taped_warp_impl!(TapedMlpWarp3, MlpWarp3, 3, 4);
taped_warp_impl!(TapedMlpWarp2, MlpWarp2, 2, 3);

impl<'a, 't> PointMap3<Var<'t>> for TapedMlpWarp3<'a, 't> {
    fn eval(&self, p: [Var<'t>; 3], t: Var<'t>) -> [Var<'t>; 3] {
        self.eval_plain(p, t)
    }
    fn eval_jet(&self, p: [Var<'t>; 3], t: Var<'t>) -> SpacetimeJet3<Var<'t>> {
        let pj: [Jet<4, Var<'t>>; 3] = std::array::from_fn(|i| Jet::seeded(p[i], i));
        let tj = Jet::seeded(t, 3);
        let w = self.eval_jet_vars(pj, tj);
        let mut jac = Mat3::zeros();
        let mut value = [Var::Const(0.0); 3];
        let mut dt = [Var::Const(0.0); 3];
        for i in 0..3 {
            value[i] = w[i].v;
            dt[i] = w[i].d[3];
            for j in 0..3 {
                jac.0[i][j] = w[i].d[j];
            }
        }
        SpacetimeJet3 { value, jacobian: jac, dt }
    }
}

impl<'a, 't> PointMap2<Var<'t>> for TapedMlpWarp2<'a, 't> {
    fn eval(&self, p: [Var<'t>; 2], t: Var<'t>) -> [Var<'t>; 2] {
        self.eval_plain(p, t)
    }
    fn eval_jet(&self, p: [Var<'t>; 2], t: Var<'t>) -> SpacetimeJet2<Var<'t>> {
        let pj: [Jet<3, Var<'t>>; 2] = std::array::from_fn(|i| Jet::seeded(p[i], i));
        let tj = Jet::seeded(t, 2);
        let w = self.eval_jet_vars(pj, tj);
        let mut jac = crate::diffcore::linalg::Mat2::zeros();
        let mut value = [Var::Const(0.0); 2];
        let mut dt = [Var::Const(0.0); 2];
        for i in 0..2 {
            value[i] = w[i].v;
            dt[i] = w[i].d[2];
            for j in 0..2 {
                jac.0[i][j] = w[i].d[j];
            }
        }
        SpacetimeJet2 { value, jacobian: jac, dt }
    }
}

/// A [`WarpField3`] usable in tape-mode generic code. Analytic variants run
/// their closed forms on `Var` scalars; the MLP variant records fused ops.
#[derive(Clone, Copy)]
pub struct TapedWarp3<'a, 't> {
    pub field: &'a WarpField3,
    pub tape: &'t Tape,
    pub blocks: Option<&'a WarpBlocks>,
}

impl<'a, 't> PointMap3<Var<'t>> for TapedWarp3<'a, 't> {
    fn eval(&self, p: [Var<'t>; 3], t: Var<'t>) -> [Var<'t>; 3] {
        match self.field {
            WarpField3::Analytic(a) => a.eval(p, t),
            WarpField3::Mlp(m) => TapedMlpWarp3 {
                warp: m,
                tape: self.tape,
                blocks: self.blocks.expect("MLP warp on tape requires blocks"),
            }
            .eval(p, t),
        }
    }
    fn eval_jet(&self, p: [Var<'t>; 3], t: Var<'t>) -> SpacetimeJet3<Var<'t>> {
        match self.field {
            WarpField3::Analytic(a) => a.eval_jet(p, t),
            WarpField3::Mlp(m) => TapedMlpWarp3 {
                warp: m,
                tape: self.tape,
                blocks: self.blocks.expect("MLP warp on tape requires blocks"),
            }
            .eval_jet(p, t),
        }
    }
}

#[derive(Clone, Copy)]
pub struct TapedWarp2<'a, 't> {
    pub field: &'a WarpField2,
    pub tape: &'t Tape,
    pub blocks: Option<&'a WarpBlocks>,
}

impl<'a, 't> PointMap2<Var<'t>> for TapedWarp2<'a, 't> {
    fn eval(&self, p: [Var<'t>; 2], t: Var<'t>) -> [Var<'t>; 2] {
        match self.field {
            WarpField2::Analytic(a) => a.eval(p, t),
            WarpField2::Mlp(m) => TapedMlpWarp2 {
                warp: m,
                tape: self.tape,
                blocks: self.blocks.expect("MLP warp on tape requires blocks"),
            }
            .eval(p, t),
        }
    }
    fn eval_jet(&self, p: [Var<'t>; 2], t: Var<'t>) -> SpacetimeJet2<Var<'t>> {
        match self.field {
            WarpField2::Analytic(a) => a.eval_jet(p, t),
            WarpField2::Mlp(m) => TapedMlpWarp2 {
                warp: m,
                tape: self.tape,
                blocks: self.blocks.expect("MLP warp on tape requires blocks"),
            }
            .eval_jet(p, t),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::FRAC_PI_2;

    #[test]
    fn translation_warp_jacobian() {
        let w = AnalyticWarp3::translation([1.0, 2.0, 3.0]);
        let j = w.eval_jet([0.4, -0.2, 1.0], 0.7);
        for i in 0..3 {
            for k in 0..3 {
                let expect = if i == k { 1.0 } else { 0.0 };
                assert!((j.jacobian.0[i][k] - expect).abs() < 1e-15);
            }
        }
        assert!((j.dt[0] + 1.0).abs() < 1e-15);
        assert!((j.dt[1] + 2.0).abs() < 1e-15);
        assert!((j.dt[2] + 3.0).abs() < 1e-15);
    }

    #[test]
    fn rotation_warp_dt_at_zero() {
        // w(p; t) = Rz(-omega t) p at p = (1,0,0), t = 0.
        let w = AnalyticWarp3::rotation_z(FRAC_PI_2);
        let j = w.eval_jet([1.0, 0.0, 0.0], 0.0);
        assert!((j.dt[0]).abs() < 1e-12);
        assert!((j.dt[1] + FRAC_PI_2).abs() < 1e-12);
        assert!((j.dt[2]).abs() < 1e-12);
        for i in 0..3 {
            for k in 0..3 {
                let expect = if i == k { 1.0 } else { 0.0 };
                assert!((j.jacobian.0[i][k] - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn rigid_rotation_example() {
        // Trajectory Rz(omega t), p = (0,1,0), omega = pi/2, t = 1 -> (1,0,0).
        let w = AnalyticWarp3::rotation_z(FRAC_PI_2);
        let pc = w.warp([0.0, 1.0, 0.0], 1.0);
        assert!((pc[0] - 1.0).abs() < 1e-12);
        assert!(pc[1].abs() < 1e-12);
    }

    #[test]
    fn affine_scaling_example() {
        let w = AnalyticWarp3::Affine(AffineWarp3::scaling());
        let pc = w.warp([2.0, 0.0, 0.0], 1.0);
        assert_eq!(pc, [4.0, 0.0, 0.0]);
    }

    #[test]
    fn shearsine_inverse_pair() {
        let w = AnalyticWarp3::ShearSine(ShearSine3::default_test());
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let p: [f64; 3] = std::array::from_fn(|_| rand::Rng::gen_range(&mut rng, -2.0..2.0));
            let t = rand::Rng::gen_range(&mut rng, 0.0..1.0);
            let q = w.warp(p, t);
            let back = w.forward(q, t);
            for i in 0..3 {
                assert!((back[i] - p[i]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn material_point_invariance_along_rigid_trajectory() {
        let traj = Trajectory3::Screw { twist: [0.3, -0.1, 0.8, 0.5, 0.2, -0.4], t0: 0.2 };
        let w = AnalyticWarp3::Rigid(traj.clone());
        let q = [0.7, -0.3, 1.1];
        let base = w.warp(traj.pose(0.0).apply(q), 0.0);
        for k in 1..20 {
            let t = k as f64 / 19.0;
            let p_t = traj.pose(t).apply(q);
            let pc = w.warp(p_t, t);
            for i in 0..3 {
                assert!((pc[i] - base[i]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn mlp_warp_zero_init_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let warp = MlpWarp3::new(MlpWarpSpec::desk(3), &mut rng);
        let p = [0.3, -0.5, 0.8];
        let j = warp.eval_jet(p, 0.37);
        assert_eq!(j.value, p);
        assert_eq!(j.dt, [0.0; 3]);
        for i in 0..3 {
            for k in 0..3 {
                assert_eq!(j.jacobian.0[i][k], if i == k { 1.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn mlp_warp_jets_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        // Modest encoding frequencies keep the FD truncation term well below
        // the comparison tolerance at h = 1e-4.
        let mut warp = MlpWarp3::new(
            MlpWarpSpec { depth: 4, width: 24, pe_point: 4, pe_time: 3, ..MlpWarpSpec::desk(3) },
            &mut rng,
        );
        // Random final layer so the field is nontrivial.
        warp.trunk = Mlp::new(&warp.spec.trunk_dims(), &mut rng);
        let p = [0.31, -0.22, 0.55];
        let t = 0.4;
        let j = warp.eval_jet(p, t);
        let h = 1e-4;
        for k in 0..3 {
            let mut pp = p;
            pp[k] += h;
            let mut pm = p;
            pm[k] -= h;
            let fp = warp.eval(pp, t);
            let fm = warp.eval(pm, t);
            for i in 0..3 {
                let fd = (fp[i] - fm[i]) / (2.0 * h);
                let rel = (j.jacobian.0[i][k] - fd).abs() / fd.abs().max(1e-3);
                assert!(rel <= 1e-5, "J[{i}][{k}] {} vs {}", j.jacobian.0[i][k], fd);
            }
        }
        let fp = warp.eval(p, t + h);
        let fm = warp.eval(p, t - h);
        for i in 0..3 {
            let fd = (fp[i] - fm[i]) / (2.0 * h);
            let rel = (j.dt[i] - fd).abs() / fd.abs().max(1e-3);
            assert!(rel <= 1e-5);
        }
    }

    #[test]
    fn time_code_is_deterministic_and_continuous() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let warp = MlpWarp3::new(MlpWarpSpec::desk(3), &mut rng);
        let c1 = warp.time_code(0.5);
        let c2 = warp.time_code(0.5);
        assert_eq!(c1, c2);
        let c3 = warp.time_code(0.5 + 1e-9);
        for (a, b) in c1.iter().zip(&c3) {
            assert!((a - b).abs() < 1e-6);
        }
        let c0 = warp.time_code(0.0);
        let c4 = warp.time_code(1.0);
        let diff: f64 = c0.iter().zip(&c4).map(|(a, b)| (a - b).abs()).sum();
        assert!(diff > 1e-6, "codes at t=0 and t=1 should differ");
    }

    #[test]
    fn taped_warp_matches_plain_eval() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let mut warp = MlpWarp2::new(
            MlpWarpSpec { depth: 3, width: 16, ..MlpWarpSpec::desk(2) },
            &mut rng,
        );
        warp.trunk = Mlp::new(&warp.spec.trunk_dims(), &mut rng);
        let tape = Tape::new();
        for s in warp.block_sizes() {
            tape.register_block(s);
        }
        let blocks = WarpBlocks::assign(0, warp.trunk.layers.len(), warp.code.layers.len());
        let taped = TapedMlpWarp2 { warp: &warp, tape: &tape, blocks: &blocks };

        let p = [0.2, -0.6];
        let t = 0.3;
        let out = taped.eval([tape.input(p[0]), tape.input(p[1])], tape.input(t));
        let direct = warp.eval(p, t);
        for i in 0..2 {
            assert!((out[i].value() - direct[i]).abs() < 1e-13);
        }

        let jet = taped.eval_jet([tape.input(p[0]), tape.input(p[1])], tape.input(t));
        let jet_direct = warp.eval_jet(p, t);
        for i in 0..2 {
            assert!((jet.value[i].value() - jet_direct.value[i]).abs() < 1e-13);
            assert!((jet.dt[i].value() - jet_direct.dt[i]).abs() < 1e-13);
            for k in 0..2 {
                assert!((jet.jacobian.0[i][k].value() - jet_direct.jacobian.0[i][k]).abs() < 1e-13);
            }
        }
        assert!(tape.replay_check());
    }
}
