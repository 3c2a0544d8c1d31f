//! Canonical radiance fields: color and density queried at canonical-space
//! points, plus the learnable image lattice used by the 2D toy fit.

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diffcore::tape::{BlockId, Tape, Var};
use crate::fields::mlp::{Mlp, TapedMlp};
use crate::fields::posenc::{posenc, posenc_dim};
use crate::real::Real;

/// Color + density query interface. Density is nonnegative by construction
/// (softplus output map); colors are sigmoid-mapped into [0, 1].
pub trait Radiance3<S: Real> {
    fn query(&self, p: [S; 3], dir: [S; 3], t: S) -> ([S; 3], S);
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq, Eq)]
pub struct MlpRadianceSpec {
    pub depth: usize,
    pub width: usize,
    pub pe_point: usize,
    pub pe_time: usize,
    pub code_dim: usize,
    pub code_depth: usize,
    pub code_width: usize,
    /// Off by default: synthetic scenes are Lambertian.
    pub use_viewdir: bool,
    pub pe_dir: usize,
}

impl MlpRadianceSpec {
    pub fn desk() -> Self {
        MlpRadianceSpec {
            depth: 4,
            width: 64,
            pe_point: 6,
            pe_time: 4,
            code_dim: 8,
            code_depth: 2,
            code_width: 32,
            use_viewdir: false,
            pe_dir: 2,
        }
    }

    fn net_dims(&self) -> Vec<usize> {
        let mut in_dim = posenc_dim(3, self.pe_point) + self.code_dim;
        if self.use_viewdir {
            in_dim += posenc_dim(3, self.pe_dir);
        }
        let mut dims = vec![in_dim];
        dims.extend(std::iter::repeat(self.width).take(self.depth - 1));
        dims.push(4);
        dims
    }

    fn code_dims(&self) -> Vec<usize> {
        let mut dims = vec![posenc_dim(1, self.pe_time)];
        dims.extend(std::iter::repeat(self.code_width).take(self.code_depth - 1));
        dims.push(self.code_dim);
        dims
    }
}

/// Trainable radiance field with a frame-wise appearance code driven by a
/// small time network.
#[derive(Clone, Debug)]
pub struct MlpRadiance {
    pub spec: MlpRadianceSpec,
    pub net: Mlp,
    pub code: Mlp,
}

impl MlpRadiance {
    pub fn new(spec: MlpRadianceSpec, rng: &mut impl Rng) -> Self {
        let net = Mlp::new(&spec.net_dims(), rng);
        let code = Mlp::new(&spec.code_dims(), rng);
        MlpRadiance { spec, net, code }
    }

    fn features<S: Real>(&self, p: [S; 3], dir: [S; 3], code: Vec<S>) -> Vec<S> {
        let mut feats = Vec::new();
        posenc(&p, self.spec.pe_point, &mut feats);
        feats.extend(code);
        if self.spec.use_viewdir {
            posenc(&dir, self.spec.pe_dir, &mut feats);
        }
        feats
    }

    pub fn block_sizes(&self) -> Vec<usize> {
        let mut s = self.net.block_sizes();
        s.extend(self.code.block_sizes());
        s
    }

    pub fn flat_params(&self) -> Vec<Vec<f64>> {
        let mut p = self.net.flat_params();
        p.extend(self.code.flat_params());
        p
    }

    pub fn load_flat_params(&mut self, blocks: &[Vec<f64>]) {
        let nn = 2 * self.net.layers.len();
        self.net.load_flat_params(&blocks[..nn]);
        self.code.load_flat_params(&blocks[nn..]);
    }
}

fn output_maps<S: Real>(raw: &[S]) -> ([S; 3], S) {
    ([raw[0].sigmoid(), raw[1].sigmoid(), raw[2].sigmoid()], raw[3].softplus())
}

impl Radiance3<f64> for MlpRadiance {
    fn query(&self, p: [f64; 3], dir: [f64; 3], t: f64) -> ([f64; 3], f64) {
        let mut tf = Vec::new();
        posenc(&[t], self.spec.pe_time, &mut tf);
        let code = self.code.eval(&tf);
        let raw = self.net.eval(&self.features(p, dir, code));
        output_maps(&raw)
    }
}

/// Radiance-network block ids on a tape: net then code layers.
#[derive(Clone, Debug)]
pub struct RadianceBlocks {
    pub net: Vec<(BlockId, BlockId)>,
    pub code: Vec<(BlockId, BlockId)>,
}

impl RadianceBlocks {
    pub fn assign(first: BlockId, net_layers: usize, code_layers: usize) -> RadianceBlocks {
        RadianceBlocks {
            net: super::warp::pair_blocks(first, net_layers),
            code: super::warp::pair_blocks(first + 2 * net_layers as u32, code_layers),
        }
    }
}

#[derive(Clone, Copy)]
pub struct TapedRadiance<'a, 't> {
    pub field: &'a MlpRadiance,
    pub tape: &'t Tape,
    pub blocks: &'a RadianceBlocks,
}

impl<'a, 't> Radiance3<Var<'t>> for TapedRadiance<'a, 't> {
    fn query(&self, p: [Var<'t>; 3], dir: [Var<'t>; 3], t: Var<'t>) -> ([Var<'t>; 3], Var<'t>) {
        let mut tf = Vec::new();
        posenc(&[t], self.field.spec.pe_time, &mut tf);
        let code = TapedMlp { mlp: &self.field.code, blocks: &self.blocks.code }.eval(self.tape, &tf);
        let feats = self.field.features(p, dir, code);
        let raw = TapedMlp { mlp: &self.field.net, blocks: &self.blocks.net }.eval(self.tape, &feats);
        output_maps(&raw)
    }
}

// ---------------------------------------------------------------------------
// Learnable image lattice for the toy fit
// ---------------------------------------------------------------------------

/// RGB image lattice with bilinear interpolation. Coordinates are in texel
/// units over `[0, w-1] x [0, h-1]`; samples outside fade to zero (missing
/// texels contribute nothing).
#[derive(Clone, Debug)]
pub struct Grid2D {
    pub width: usize,
    pub height: usize,
    /// `height x width x 3`, row-major.
    pub data: Arc<Vec<f64>>,
}

impl Grid2D {
    pub fn new(width: usize, height: usize, fill: [f64; 3]) -> Grid2D {
        let mut data = Vec::with_capacity(width * height * 3);
        for _ in 0..width * height {
            data.extend_from_slice(&fill);
        }
        Grid2D { width, height, data: Arc::new(data) }
    }

    pub fn from_data(width: usize, height: usize, data: Vec<f64>) -> Grid2D {
        assert_eq!(data.len(), width * height * 3);
        Grid2D { width, height, data: Arc::new(data) }
    }

    pub fn texel(&self, x: usize, y: usize) -> [f64; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    fn sample_with<S: Real>(&self, x: S, y: S, fetch: impl Fn(usize) -> S) -> [S; 3] {
        let xf = x.primal().floor();
        let yf = y.primal().floor();
        let ix = xf as i64;
        let iy = yf as i64;
        let fx = x - S::from_f64(xf);
        let fy = y - S::from_f64(yf);
        let mut out = [S::zero(); 3];
        for (dx, dy) in [(0i64, 0i64), (1, 0), (0, 1), (1, 1)] {
            let (tx, ty) = (ix + dx, iy + dy);
            if tx < 0 || ty < 0 || tx >= self.width as i64 || ty >= self.height as i64 {
                continue;
            }
            let wx = if dx == 0 { S::one() - fx } else { fx };
            let wy = if dy == 0 { S::one() - fy } else { fy };
            let w = wx * wy;
            let base = (ty as usize * self.width + tx as usize) * 3;
            for c in 0..3 {
                out[c] = out[c] + w * fetch(base + c);
            }
        }
        out
    }

    pub fn sample<S: Real>(&self, x: S, y: S) -> [S; 3] {
        self.sample_with(x, y, |i| S::from_f64(self.data[i]))
    }

    /// Tape-mode sample: touched texels become parameter leaves of `block`.
    pub fn sample_on_tape<'t>(&self, tape: &'t Tape, block: BlockId, x: Var<'t>, y: Var<'t>) -> [Var<'t>; 3] {
        self.sample_with(x, y, |i| tape.param(block, i, self.data[i]))
    }

    pub fn block_size(&self) -> usize {
        self.data.len()
    }
}
