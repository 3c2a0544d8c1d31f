//! Dense networks with softplus hidden activations.
//!
//! Three evaluation paths share one set of weights:
//! - plain scalars for rendering,
//! - jets for input derivatives (spatial Jacobian, time derivative),
//! - fused tape ops for parameter gradients. The fused backward passes are
//!   written at the layer level so a network evaluation costs a single tape
//!   node group instead of one node per multiply; the jet variant
//!   backpropagates through the jet channels, which is what makes losses on
//!   velocities (functions of the warp's input derivatives) differentiable
//!   w.r.t. the weights.

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diffcore::jet::Jet;
use crate::diffcore::tape::{BlockGrads, BlockId, Tape, TapeOp, Var};
use crate::real::Real;

#[derive(Clone, Debug)]
pub struct Dense {
    /// Row-major `out_dim x in_dim`.
    pub w: Arc<Vec<f64>>,
    pub b: Arc<Vec<f64>>,
    pub in_dim: usize,
    pub out_dim: usize,
}

/// The channel-count-monomorphized kernels below are the hot loops of the
/// whole crate; fixed-size accumulators keep them in registers.
fn linear_channels<const NCH: usize>(
    w: &[f64],
    b: &[f64],
    in_dim: usize,
    out_dim: usize,
    x: &[f64],
    out: &mut [f64],
) {
    debug_assert_eq!(x.len(), in_dim * NCH);
    for o in 0..out_dim {
        let row = &w[o * in_dim..(o + 1) * in_dim];
        let mut acc = [0.0f64; NCH];
        acc[0] = b[o];
        for (wi, xc) in row.iter().zip(x.chunks_exact(NCH)) {
            for c in 0..NCH {
                acc[c] += wi * xc[c];
            }
        }
        out[o * NCH..(o + 1) * NCH].copy_from_slice(&acc);
    }
}

fn dispatch_linear(
    w: &[f64],
    b: &[f64],
    in_dim: usize,
    out_dim: usize,
    x: &[f64],
    nch: usize,
    out: &mut [f64],
) {
    match nch {
        1 => linear_channels::<1>(w, b, in_dim, out_dim, x, out),
        3 => linear_channels::<3>(w, b, in_dim, out_dim, x, out),
        4 => linear_channels::<4>(w, b, in_dim, out_dim, x, out),
        5 => linear_channels::<5>(w, b, in_dim, out_dim, x, out),
        _ => linear_channels_any(w, b, in_dim, out_dim, x, nch, out),
    }
}

fn linear_channels_any(
    w: &[f64],
    b: &[f64],
    in_dim: usize,
    out_dim: usize,
    x: &[f64],
    nch: usize,
    out: &mut [f64],
) {
    for o in 0..out_dim {
        let row = &w[o * in_dim..(o + 1) * in_dim];
        let acc = &mut out[o * nch..(o + 1) * nch];
        acc[0] = b[o];
        for a in acc[1..].iter_mut() {
            *a = 0.0;
        }
        for (wi, xc) in row.iter().zip(x.chunks_exact(nch)) {
            for c in 0..nch {
                acc[c] += wi * xc[c];
            }
        }
    }
}

impl Dense {
    fn forward(&self, x: &[f64], out: &mut [f64]) {
        linear_channels::<1>(&self.w, &self.b, self.in_dim, self.out_dim, x, out);
    }

    /// Channel-major jet forward: the same linear map on every channel,
    /// bias only on the value channel.
    fn forward_channels(&self, x: &[f64], nch: usize, out: &mut [f64]) {
        dispatch_linear(&self.w, &self.b, self.in_dim, self.out_dim, x, nch, out);
    }
}

/// Shape description stored in checkpoints.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq, Eq)]
pub struct MlpDims(pub Vec<usize>);

#[derive(Clone, Debug)]
pub struct Mlp {
    pub layers: Vec<Dense>,
}

impl Mlp {
    /// Xavier-uniform initialization over the given layer dims.
    pub fn new(dims: &[usize], rng: &mut impl Rng) -> Mlp {
        assert!(dims.len() >= 2);
        let layers = dims
            .windows(2)
            .map(|d| {
                let (fan_in, fan_out) = (d[0], d[1]);
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let w: Vec<f64> = (0..fan_in * fan_out).map(|_| rng.gen_range(-limit..limit)).collect();
                Dense {
                    w: Arc::new(w),
                    b: Arc::new(vec![0.0; fan_out]),
                    in_dim: fan_in,
                    out_dim: fan_out,
                }
            })
            .collect();
        Mlp { layers }
    }

    /// Zero the last layer so the network starts as the constant-zero map.
    pub fn zero_final(&mut self) {
        let last = self.layers.last_mut().unwrap();
        last.w = Arc::new(vec![0.0; last.w.len()]);
        last.b = Arc::new(vec![0.0; last.b.len()]);
    }

    pub fn in_dim(&self) -> usize {
        self.layers.first().unwrap().in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().unwrap().out_dim
    }

    pub fn dims(&self) -> MlpDims {
        let mut d = vec![self.in_dim()];
        d.extend(self.layers.iter().map(|l| l.out_dim));
        MlpDims(d)
    }

    pub fn eval(&self, x: &[f64]) -> Vec<f64> {
        let mut cur = x.to_vec();
        let mut next = Vec::new();
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            next.resize(layer.out_dim, 0.0);
            layer.forward(&cur, &mut next);
            if l != last {
                for v in next.iter_mut() {
                    *v = Real::softplus(*v);
                }
            }
            std::mem::swap(&mut cur, &mut next);
        }
        cur
    }

    pub fn eval_jet<const N: usize>(&self, x: &[Jet<N, f64>]) -> Vec<Jet<N, f64>> {
        let nch = N + 1;
        let mut cur = flatten_jets(x);
        let mut next = Vec::new();
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            next.resize(layer.out_dim * nch, 0.0);
            layer.forward_channels(&cur, nch, &mut next);
            if l != last {
                softplus_channels(&mut next, nch);
            }
            std::mem::swap(&mut cur, &mut next);
        }
        unflatten_jets(&cur)
    }

    /// Reference evaluation at any scalar; the fused tape ops are tested
    /// against this path.
    pub fn eval_generic<S: Real>(&self, x: &[S]) -> Vec<S> {
        let mut cur = x.to_vec();
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            let mut next = Vec::with_capacity(layer.out_dim);
            for o in 0..layer.out_dim {
                let mut acc = S::from_f64(layer.b[o]);
                for i in 0..layer.in_dim {
                    acc = acc + S::from_f64(layer.w[o * layer.in_dim + i]) * cur[i];
                }
                next.push(if l != last { acc.softplus() } else { acc });
            }
            cur = next;
        }
        cur
    }

    /// Parameter blocks in registration order: `w` then `b` per layer.
    pub fn block_sizes(&self) -> Vec<usize> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.push(l.w.len());
            out.push(l.b.len());
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.block_sizes().iter().sum()
    }

    /// Flattened parameters, `w` then `b` per layer.
    pub fn flat_params(&self) -> Vec<Vec<f64>> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.push(l.w.as_ref().clone());
            out.push(l.b.as_ref().clone());
        }
        out
    }

    pub fn load_flat_params(&mut self, blocks: &[Vec<f64>]) {
        assert_eq!(blocks.len(), 2 * self.layers.len());
        for (i, l) in self.layers.iter_mut().enumerate() {
            assert_eq!(blocks[2 * i].len(), l.w.len());
            assert_eq!(blocks[2 * i + 1].len(), l.b.len());
            l.w = Arc::new(blocks[2 * i].clone());
            l.b = Arc::new(blocks[2 * i + 1].clone());
        }
    }
}

fn flatten_jets<const N: usize>(x: &[Jet<N, f64>]) -> Vec<f64> {
    let nch = N + 1;
    let mut out = vec![0.0; x.len() * nch];
    for (i, j) in x.iter().enumerate() {
        out[i * nch] = j.v;
        out[i * nch + 1..(i + 1) * nch].copy_from_slice(&j.d);
    }
    out
}

fn unflatten_jets<const N: usize>(flat: &[f64]) -> Vec<Jet<N, f64>> {
    let nch = N + 1;
    flat.chunks_exact(nch)
        .map(|c| {
            let mut d = [0.0; N];
            d.copy_from_slice(&c[1..]);
            Jet { v: c[0], d }
        })
        .collect()
}

fn softplus_channels(buf: &mut [f64], nch: usize) {
    for chunk in buf.chunks_exact_mut(nch) {
        let v = chunk[0];
        let s = Real::sigmoid(v);
        chunk[0] = Real::softplus(v);
        for c in chunk[1..].iter_mut() {
            *c *= s;
        }
    }
}

// ---------------------------------------------------------------------------
// Fused tape ops
// ---------------------------------------------------------------------------

#[derive(Clone)]
struct LayerSnap {
    w: Arc<Vec<f64>>,
    b: Arc<Vec<f64>>,
    wb: BlockId,
    bb: BlockId,
    in_dim: usize,
    out_dim: usize,
}

/// An [`Mlp`] paired with its registered parameter blocks on some tape.
#[derive(Clone, Copy)]
pub struct TapedMlp<'a> {
    pub mlp: &'a Mlp,
    /// `(w, b)` block ids per layer, in layer order.
    pub blocks: &'a [(BlockId, BlockId)],
}

impl<'a> TapedMlp<'a> {
    fn snaps(&self) -> Vec<LayerSnap> {
        self.mlp
            .layers
            .iter()
            .zip(self.blocks)
            .map(|(l, &(wb, bb))| LayerSnap {
                w: l.w.clone(),
                b: l.b.clone(),
                wb,
                bb,
                in_dim: l.in_dim,
                out_dim: l.out_dim,
            })
            .collect()
    }

    pub fn eval<'t>(&self, tape: &'t Tape, x: &[Var<'t>]) -> Vec<Var<'t>> {
        let xv: Vec<f64> = x.iter().map(|v| v.value()).collect();
        let op = MlpFusedOp::forward(self.snaps(), xv, 1);
        let out_vals = op.outputs().to_vec();
        tape.push_op(Box::new(op), x, &out_vals)
    }

    pub fn eval_jet<'t, const N: usize>(
        &self,
        tape: &'t Tape,
        x: &[Jet<N, Var<'t>>],
    ) -> Vec<Jet<N, Var<'t>>> {
        let nch = N + 1;
        let mut in_vars = Vec::with_capacity(x.len() * nch);
        let mut in_vals = Vec::with_capacity(x.len() * nch);
        for j in x {
            in_vars.push(j.v);
            in_vals.push(j.v.value());
            for c in 0..N {
                in_vars.push(j.d[c]);
                in_vals.push(j.d[c].value());
            }
        }
        let op = MlpFusedOp::forward(self.snaps(), in_vals, nch);
        let out_vals = op.outputs().to_vec();
        let out_vars = tape.push_op(Box::new(op), &in_vars, &out_vals);
        out_vars
            .chunks_exact(nch)
            .map(|c| {
                let mut d = [Var::Const(0.0); N];
                d.copy_from_slice(&c[1..]);
                Jet { v: c[0], d }
            })
            .collect()
    }
}

/// One recorded network evaluation: `nch = 1` for plain scalars; for jets,
/// inputs and outputs are channel-major `(value, d_1 .. d_N)` groups.
struct MlpFusedOp {
    layers: Vec<LayerSnap>,
    nch: usize,
    /// Input values followed by each layer's pre-activation values.
    saved: Vec<f64>,
}

impl MlpFusedOp {
    fn forward(layers: Vec<LayerSnap>, input: Vec<f64>, nch: usize) -> MlpFusedOp {
        let mut saved = input;
        let mut offset = 0;
        for (l, layer) in layers.iter().enumerate() {
            let in_len = layer.in_dim * nch;
            let out_len = layer.out_dim * nch;
            let start = saved.len();
            saved.resize(start + out_len, 0.0);
            let (head, tail) = saved.split_at_mut(start);
            let mut x_buf;
            let x: &[f64] = if l == 0 {
                &head[offset..offset + in_len]
            } else {
                // Activation of the previous pre-activations.
                x_buf = head[offset..offset + in_len].to_vec();
                softplus_channels(&mut x_buf, nch);
                &x_buf
            };
            if nch == 1 {
                layer.forward_plain(x, tail);
            } else {
                layer.forward_channels_snap(x, nch, tail);
            }
            offset = start;
        }
        MlpFusedOp { layers, nch, saved }
    }

    fn outputs(&self) -> &[f64] {
        let out_len = self.layers.last().unwrap().out_dim * self.nch;
        &self.saved[self.saved.len() - out_len..]
    }

    /// Offset of layer `l`'s pre-activations inside `saved`.
    fn preact_offset(&self, l: usize) -> usize {
        let mut off = self.layers[0].in_dim * self.nch;
        for layer in &self.layers[..l] {
            off += layer.out_dim * self.nch;
        }
        off
    }
}

impl LayerSnap {
    fn forward_plain(&self, x: &[f64], out: &mut [f64]) {
        linear_channels::<1>(&self.w, &self.b, self.in_dim, self.out_dim, x, out);
    }

    fn forward_channels_snap(&self, x: &[f64], nch: usize, out: &mut [f64]) {
        dispatch_linear(&self.w, &self.b, self.in_dim, self.out_dim, x, nch, out);
    }
}

impl MlpFusedOp {
    fn backward_impl<const NCH: usize>(
        &self,
        out_cot: &[f64],
        in_cot: &mut [f64],
        blocks: &mut BlockGrads,
    ) {
        let nlayers = self.layers.len();
        // Cotangent of the current layer's pre-activations.
        let mut delta = out_cot.to_vec();
        let mut act_buf: Vec<f64> = Vec::new();
        let mut x_cot: Vec<f64> = Vec::new();
        for l in (0..nlayers).rev() {
            let layer = &self.layers[l];
            let in_len = layer.in_dim * NCH;

            // Input that fed this layer's linear map.
            let input: &[f64] = if l == 0 {
                &self.saved[..in_len]
            } else {
                let off = self.preact_offset(l - 1);
                act_buf.clear();
                act_buf.extend_from_slice(&self.saved[off..off + in_len]);
                softplus_channels(&mut act_buf, NCH);
                &act_buf
            };

            {
                let gw = blocks.get_mut(layer.wb);
                for o in 0..layer.out_dim {
                    let mut drow = [0.0; NCH];
                    drow.copy_from_slice(&delta[o * NCH..(o + 1) * NCH]);
                    let grow = &mut gw[o * layer.in_dim..(o + 1) * layer.in_dim];
                    for (g, xc) in grow.iter_mut().zip(input.chunks_exact(NCH)) {
                        let mut acc = 0.0;
                        for c in 0..NCH {
                            acc += drow[c] * xc[c];
                        }
                        *g += acc;
                    }
                }
            }
            {
                let gb = blocks.get_mut(layer.bb);
                for o in 0..layer.out_dim {
                    gb[o] += delta[o * NCH];
                }
            }

            // Cotangent of this layer's input (post-activation side).
            x_cot.clear();
            x_cot.resize(in_len, 0.0);
            for o in 0..layer.out_dim {
                let row = &layer.w[o * layer.in_dim..(o + 1) * layer.in_dim];
                let mut drow = [0.0; NCH];
                drow.copy_from_slice(&delta[o * NCH..(o + 1) * NCH]);
                for (wi, xc) in row.iter().zip(x_cot.chunks_exact_mut(NCH)) {
                    for c in 0..NCH {
                        xc[c] += wi * drow[c];
                    }
                }
            }

            if l == 0 {
                for (dst, src) in in_cot.iter_mut().zip(&x_cot) {
                    *dst += src;
                }
            } else {
                // Through the softplus: for jets the value channel also picks
                // up the curvature term from the partial channels.
                let off = self.preact_offset(l - 1);
                let pre = &self.saved[off..off + in_len];
                delta.clear();
                delta.resize(in_len, 0.0);
                for i in 0..layer.in_dim {
                    let u = &pre[i * NCH..(i + 1) * NCH];
                    let yc = &x_cot[i * NCH..(i + 1) * NCH];
                    let s = Real::sigmoid(u[0]);
                    let ds = s * (1.0 - s);
                    let mut curv = 0.0;
                    for c in 1..NCH {
                        curv += u[c] * yc[c];
                        delta[i * NCH + c] = s * yc[c];
                    }
                    delta[i * NCH] = s * yc[0] + ds * curv;
                }
            }
        }
    }
}

impl TapeOp for MlpFusedOp {
    fn backward(&self, out_cot: &[f64], in_cot: &mut [f64], blocks: &mut BlockGrads) {
        match self.nch {
            1 => self.backward_impl::<1>(out_cot, in_cot, blocks),
            3 => self.backward_impl::<3>(out_cot, in_cot, blocks),
            4 => self.backward_impl::<4>(out_cot, in_cot, blocks),
            5 => self.backward_impl::<5>(out_cot, in_cot, blocks),
            n => panic!("unsupported channel count {n}"),
        }
    }

    fn replay(&self, out: &mut [f64]) {
        let in_len = self.layers[0].in_dim * self.nch;
        let op = MlpFusedOp::forward(self.layers.clone(), self.saved[..in_len].to_vec(), self.nch);
        out.copy_from_slice(op.outputs());
    }
}
