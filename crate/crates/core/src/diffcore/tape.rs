//! Reverse-accumulation tape over named parameter blocks.
//!
//! The tape is a Wengert list of scalar operations plus "fused" ops
//! (implementors of [`TapeOp`], e.g. whole dense-network evaluations) that
//! keep their own saved state and hand back input cotangents and parameter
//! gradients in one call. Scalar glue (velocity algebra, integration,
//! compositing, losses) records node-by-node through the [`Var`] arithmetic;
//! the heavy linear algebra stays inside fused ops so node counts stay small.
//!
//! A tape is confined to one thread. Batched training records one tape per
//! ray chunk and merges the per-chunk block gradients in chunk order.

use std::cell::RefCell;
use std::cmp::Ordering;
use std::ops::{Add, Div, Mul, Neg, Sub};

use num_traits::{One, Zero};
use thiserror::Error;

use crate::real::Real;

#[derive(Debug, Error)]
pub enum TapeError {
    #[error("loss is not finite: {0}")]
    NonFiniteLoss(f64),
    #[error("loss variable is a constant; nothing to differentiate")]
    ConstantLoss,
}

/// Index of a registered parameter block.
pub type BlockId = u32;

const NO_NODE: u32 = u32::MAX;

#[derive(Copy, Clone, Debug)]
enum UnaryKind {
    Sin,
    Cos,
    Exp,
    Ln,
    Ln1p,
    Sqrt,
    Abs,
    Recip,
    Powi(i32),
    Softplus,
    Sigmoid,
}

impl UnaryKind {
    fn eval(self, x: f64) -> f64 {
        match self {
            UnaryKind::Sin => x.sin(),
            UnaryKind::Cos => x.cos(),
            UnaryKind::Exp => x.exp(),
            UnaryKind::Ln => x.ln(),
            UnaryKind::Ln1p => x.ln_1p(),
            UnaryKind::Sqrt => x.sqrt(),
            UnaryKind::Abs => x.abs(),
            UnaryKind::Recip => x.recip(),
            UnaryKind::Powi(n) => x.powi(n),
            UnaryKind::Softplus => Real::softplus(x),
            UnaryKind::Sigmoid => Real::sigmoid(x),
        }
    }
}

#[derive(Copy, Clone, Debug)]
enum Node {
    /// Leaf whose gradient is readable after backward.
    Input,
    /// Leaf bound to one element of a parameter block.
    Param { block: BlockId, index: u32 },
    /// k * x + b. Constant-folded arithmetic lands here.
    Affine { a: u32, k: f64, b: f64 },
    Add { a: u32, b: u32 },
    Sub { a: u32, b: u32 },
    Mul { a: u32, b: u32 },
    Div { a: u32, b: u32 },
    Unary { a: u32, kind: UnaryKind, partial: f64 },
    /// Output slot of a fused op.
    OpaqueOut,
    /// Sentinel placed after a fused op's outputs; triggers its backward.
    OpaqueCall { op: u32 },
}

/// Per-block gradient accumulator handed to fused ops during backward.
pub struct BlockGrads {
    grads: Vec<Option<Vec<f64>>>,
    sizes: Vec<usize>,
}

impl BlockGrads {
    fn new(sizes: &[usize]) -> Self {
        BlockGrads { grads: vec![None; sizes.len()], sizes: sizes.to_vec() }
    }

    pub fn get_mut(&mut self, block: BlockId) -> &mut [f64] {
        let slot = &mut self.grads[block as usize];
        if slot.is_none() {
            *slot = Some(vec![0.0; self.sizes[block as usize]]);
        }
        slot.as_mut().unwrap()
    }
}

/// A fused differentiable operation recorded on the tape.
///
/// Implementations save whatever forward state they need. `backward`
/// receives the cotangents of its outputs and must add input cotangents into
/// `in_cot` (aligned with the inputs passed at record time) and parameter
/// gradients into `blocks`. `replay` recomputes the outputs from saved state.
pub trait TapeOp {
    fn backward(&self, out_cot: &[f64], in_cot: &mut [f64], blocks: &mut BlockGrads);
    fn replay(&self, out: &mut [f64]);
}

struct OpRec {
    op: Box<dyn TapeOp>,
    in_start: u32,
    in_len: u32,
    out_start: u32,
    out_len: u32,
}

#[derive(Default)]
struct TapeInner {
    nodes: Vec<Node>,
    vals: Vec<f64>,
    ops: Vec<OpRec>,
    op_inputs: Vec<u32>,
    block_sizes: Vec<usize>,
}

/// Recorded computation over named parameter blocks.
#[derive(Default)]
pub struct Tape {
    inner: RefCell<TapeInner>,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    /// Drop all recorded state but keep allocations and block registrations.
    pub fn reset(&self) {
        let mut t = self.inner.borrow_mut();
        t.nodes.clear();
        t.vals.clear();
        t.ops.clear();
        t.op_inputs.clear();
    }

    pub fn len(&self) -> usize {
        self.inner.borrow().nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Register a parameter block of `size` scalars; ids are assigned in
    /// registration order, so re-registering in a fixed order reproduces ids.
    pub fn register_block(&self, size: usize) -> BlockId {
        let mut t = self.inner.borrow_mut();
        t.block_sizes.push(size);
        (t.block_sizes.len() - 1) as BlockId
    }

    pub fn block_count(&self) -> usize {
        self.inner.borrow().block_sizes.len()
    }

    fn push(&self, node: Node, val: f64) -> u32 {
        let mut t = self.inner.borrow_mut();
        t.nodes.push(node);
        t.vals.push(val);
        (t.nodes.len() - 1) as u32
    }

    /// Differentiable input leaf.
    pub fn input(&self, value: f64) -> Var<'_> {
        Var::Node { tape: self, idx: self.push(Node::Input, value) }
    }

    /// Leaf bound to `block[index]`, recorded at its current value.
    pub fn param(&self, block: BlockId, index: usize, value: f64) -> Var<'_> {
        Var::Node { tape: self, idx: self.push(Node::Param { block, index: index as u32 }, value) }
    }

    pub fn constant(&self, value: f64) -> Var<'_> {
        Var::Const(value)
    }

    /// Record a fused op. `out_vals` are the outputs the op already computed.
    pub fn push_op(&self, op: Box<dyn TapeOp>, inputs: &[Var<'_>], out_vals: &[f64]) -> Vec<Var<'_>> {
        let (in_start, in_len, out_start);
        {
            let mut t = self.inner.borrow_mut();
            in_start = t.op_inputs.len() as u32;
            for v in inputs {
                let idx = match v {
                    Var::Const(_) => NO_NODE,
                    Var::Node { idx, .. } => *idx,
                };
                t.op_inputs.push(idx);
            }
            in_len = inputs.len() as u32;
            out_start = t.nodes.len() as u32;
            for &val in out_vals {
                t.nodes.push(Node::OpaqueOut);
                t.vals.push(val);
            }
            let op_idx = t.ops.len() as u32;
            t.ops.push(OpRec { op, in_start, in_len, out_start, out_len: out_vals.len() as u32 });
            t.nodes.push(Node::OpaqueCall { op: op_idx });
            t.vals.push(0.0);
        }
        (0..out_vals.len())
            .map(|i| Var::Node { tape: self, idx: out_start + i as u32 })
            .collect()
    }

    /// Reverse pass from `loss`. Gradients of every parameter block touched
    /// by the recorded computation, plus per-leaf input gradients.
    pub fn param_gradient(&self, loss: Var<'_>) -> Result<Grads, TapeError> {
        let loss_idx = match loss {
            Var::Const(v) => {
                return if v.is_finite() { Err(TapeError::ConstantLoss) } else { Err(TapeError::NonFiniteLoss(v)) }
            }
            Var::Node { idx, .. } => idx,
        };
        let t = self.inner.borrow();
        let loss_val = t.vals[loss_idx as usize];
        if !loss_val.is_finite() {
            return Err(TapeError::NonFiniteLoss(loss_val));
        }

        let mut grad = vec![0.0f64; t.nodes.len()];
        grad[loss_idx as usize] = 1.0;
        let mut blocks = BlockGrads::new(&t.block_sizes);
        let mut in_cot: Vec<f64> = Vec::new();
        let mut out_cot: Vec<f64> = Vec::new();

        for i in (0..t.nodes.len()).rev() {
            match t.nodes[i] {
                Node::Input | Node::OpaqueOut => {}
                Node::Param { block, index } => {
                    let g = grad[i];
                    if g != 0.0 {
                        blocks.get_mut(block)[index as usize] += g;
                    }
                }
                Node::Affine { a, k, .. } => {
                    grad[a as usize] += grad[i] * k;
                }
                Node::Add { a, b } => {
                    let g = grad[i];
                    grad[a as usize] += g;
                    grad[b as usize] += g;
                }
                Node::Sub { a, b } => {
                    let g = grad[i];
                    grad[a as usize] += g;
                    grad[b as usize] -= g;
                }
                Node::Mul { a, b } => {
                    let g = grad[i];
                    grad[a as usize] += g * t.vals[b as usize];
                    grad[b as usize] += g * t.vals[a as usize];
                }
                Node::Div { a, b } => {
                    let g = grad[i];
                    let inv_b = 1.0 / t.vals[b as usize];
                    grad[a as usize] += g * inv_b;
                    grad[b as usize] -= g * t.vals[i] * inv_b;
                }
                Node::Unary { a, partial, .. } => {
                    grad[a as usize] += grad[i] * partial;
                }
                Node::OpaqueCall { op } => {
                    let rec = &t.ops[op as usize];
                    out_cot.clear();
                    out_cot.extend(
                        (rec.out_start..rec.out_start + rec.out_len).map(|j| grad[j as usize]),
                    );
                    in_cot.clear();
                    in_cot.resize(rec.in_len as usize, 0.0);
                    rec.op.backward(&out_cot, &mut in_cot, &mut blocks);
                    for (k, &node_idx) in t.op_inputs
                        [rec.in_start as usize..(rec.in_start + rec.in_len) as usize]
                        .iter()
                        .enumerate()
                    {
                        if node_idx != NO_NODE {
                            grad[node_idx as usize] += in_cot[k];
                        }
                    }
                }
            }
        }

        Ok(Grads { node_grad: grad, blocks: blocks.grads, sizes: blocks.sizes })
    }

    /// Recompute every recorded value from the leaves; true iff the forward
    /// pass is reproduced bit-identically.
    pub fn replay_check(&self) -> bool {
        let t = self.inner.borrow();
        let mut vals = vec![0.0f64; t.nodes.len()];
        let mut out_buf: Vec<f64> = Vec::new();
        for i in 0..t.nodes.len() {
            vals[i] = match t.nodes[i] {
                Node::Input | Node::Param { .. } | Node::OpaqueOut => t.vals[i],
                Node::Affine { a, k, b } => k * vals[a as usize] + b,
                Node::Add { a, b } => vals[a as usize] + vals[b as usize],
                Node::Sub { a, b } => vals[a as usize] - vals[b as usize],
                Node::Mul { a, b } => vals[a as usize] * vals[b as usize],
                Node::Div { a, b } => vals[a as usize] / vals[b as usize],
                Node::Unary { a, kind, .. } => kind.eval(vals[a as usize]),
                Node::OpaqueCall { op } => {
                    let rec = &t.ops[op as usize];
                    out_buf.clear();
                    out_buf.resize(rec.out_len as usize, 0.0);
                    rec.op.replay(&mut out_buf);
                    for (k, &v) in out_buf.iter().enumerate() {
                        let j = (rec.out_start + k as u32) as usize;
                        if v.to_bits() != t.vals[j].to_bits() {
                            return false;
                        }
                        vals[j] = v;
                    }
                    0.0
                }
            };
            if vals[i].to_bits() != t.vals[i].to_bits() {
                return false;
            }
        }
        true
    }
}

/// Result of a reverse pass.
pub struct Grads {
    node_grad: Vec<f64>,
    blocks: Vec<Option<Vec<f64>>>,
    sizes: Vec<usize>,
}

impl Grads {
    /// Gradient of the loss w.r.t. an input leaf (or any recorded node).
    pub fn wrt(&self, v: Var<'_>) -> f64 {
        match v {
            Var::Const(_) => 0.0,
            Var::Node { idx, .. } => self.node_grad[idx as usize],
        }
    }

    /// Gradient of a parameter block; zeros if the block was never touched.
    pub fn block(&self, id: BlockId) -> Vec<f64> {
        match &self.blocks[id as usize] {
            Some(g) => g.clone(),
            None => vec![0.0; self.sizes[id as usize]],
        }
    }

    pub fn block_slice(&self, id: BlockId) -> Option<&[f64]> {
        self.blocks[id as usize].as_deref()
    }

    /// Add another gradient set into this one (same registration order).
    pub fn accumulate(&mut self, other: &Grads) {
        for (dst, src) in self.blocks.iter_mut().zip(&other.blocks) {
            if let Some(s) = src {
                match dst {
                    Some(d) => {
                        for (a, b) in d.iter_mut().zip(s) {
                            *a += b;
                        }
                    }
                    None => *dst = Some(s.clone()),
                }
            }
        }
    }

    pub fn scale(&mut self, k: f64) {
        for b in self.blocks.iter_mut().flatten() {
            for g in b.iter_mut() {
                *g *= k;
            }
        }
    }
}

/// Scalar on a [`Tape`]. Constants never touch the tape.
#[derive(Copy, Clone)]
pub enum Var<'t> {
    Const(f64),
    Node { tape: &'t Tape, idx: u32 },
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var({})", self.value())
    }
}

impl<'t> Var<'t> {
    pub fn value(self) -> f64 {
        match self {
            Var::Const(v) => v,
            Var::Node { tape, idx } => tape.inner.borrow().vals[idx as usize],
        }
    }

    fn unary(self, kind: UnaryKind) -> Var<'t> {
        match self {
            Var::Const(v) => Var::Const(kind.eval(v)),
            Var::Node { tape, idx } => {
                let x = self.value();
                let val = kind.eval(x);
                let partial = match kind {
                    UnaryKind::Sin => x.cos(),
                    UnaryKind::Cos => -x.sin(),
                    UnaryKind::Exp => val,
                    UnaryKind::Ln => 1.0 / x,
                    UnaryKind::Ln1p => 1.0 / (1.0 + x),
                    UnaryKind::Sqrt => {
                        if val > 0.0 {
                            0.5 / val
                        } else {
                            0.0
                        }
                    }
                    UnaryKind::Abs => {
                        if x > 0.0 {
                            1.0
                        } else if x < 0.0 {
                            -1.0
                        } else {
                            0.0
                        }
                    }
                    UnaryKind::Recip => -val * val,
                    UnaryKind::Powi(n) => f64::from(n) * x.powi(n - 1),
                    UnaryKind::Softplus => Real::sigmoid(x),
                    UnaryKind::Sigmoid => val * (1.0 - val),
                };
                Var::Node { tape, idx: tape.push(Node::Unary { a: idx, kind, partial }, val) }
            }
        }
    }

    fn affine(self, k: f64, b: f64) -> Var<'t> {
        match self {
            Var::Const(v) => Var::Const(k * v + b),
            Var::Node { tape, idx } => {
                if k == 1.0 && b == 0.0 {
                    return self;
                }
                let val = k * self.value() + b;
                Var::Node { tape, idx: tape.push(Node::Affine { a: idx, k, b }, val) }
            }
        }
    }
}

impl<'t> Add for Var<'t> {
    type Output = Var<'t>;
    fn add(self, rhs: Var<'t>) -> Var<'t> {
        match (self, rhs) {
            (Var::Const(a), Var::Const(b)) => Var::Const(a + b),
            (Var::Const(c), v) | (v, Var::Const(c)) => v.affine(1.0, c),
            (Var::Node { tape, idx: a }, Var::Node { idx: b, .. }) => {
                let val = self.value() + rhs.value();
                Var::Node { tape, idx: tape.push(Node::Add { a, b }, val) }
            }
        }
    }
}

impl<'t> Sub for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, rhs: Var<'t>) -> Var<'t> {
        match (self, rhs) {
            (Var::Const(a), Var::Const(b)) => Var::Const(a - b),
            (v, Var::Const(c)) => v.affine(1.0, -c),
            (Var::Const(c), v) => v.affine(-1.0, c),
            (Var::Node { tape, idx: a }, Var::Node { idx: b, .. }) => {
                let val = self.value() - rhs.value();
                Var::Node { tape, idx: tape.push(Node::Sub { a, b }, val) }
            }
        }
    }
}

impl<'t> Mul for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, rhs: Var<'t>) -> Var<'t> {
        match (self, rhs) {
            (Var::Const(a), Var::Const(b)) => Var::Const(a * b),
            (Var::Const(c), v) | (v, Var::Const(c)) => v.affine(c, 0.0),
            (Var::Node { tape, idx: a }, Var::Node { idx: b, .. }) => {
                let val = self.value() * rhs.value();
                Var::Node { tape, idx: tape.push(Node::Mul { a, b }, val) }
            }
        }
    }
}

impl<'t> Div for Var<'t> {
    type Output = Var<'t>;
    fn div(self, rhs: Var<'t>) -> Var<'t> {
        match (self, rhs) {
            (Var::Const(a), Var::Const(b)) => Var::Const(a / b),
            (v, Var::Const(c)) => v.affine(1.0 / c, 0.0),
            (Var::Const(c), v) => v.unary(UnaryKind::Recip).affine(c, 0.0),
            (Var::Node { tape, idx: a }, Var::Node { idx: b, .. }) => {
                let val = self.value() / rhs.value();
                Var::Node { tape, idx: tape.push(Node::Div { a, b }, val) }
            }
        }
    }
}

impl<'t> Neg for Var<'t> {
    type Output = Var<'t>;
    fn neg(self) -> Var<'t> {
        self.affine(-1.0, 0.0)
    }
}

impl PartialEq for Var<'_> {
    fn eq(&self, other: &Self) -> bool {
        self.value() == other.value()
    }
}

impl PartialOrd for Var<'_> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        self.value().partial_cmp(&other.value())
    }
}

impl Zero for Var<'_> {
    fn zero() -> Self {
        Var::Const(0.0)
    }
    fn is_zero(&self) -> bool {
        self.value() == 0.0
    }
}

impl One for Var<'_> {
    fn one() -> Self {
        Var::Const(1.0)
    }
}

impl<'t> Real for Var<'t> {
    fn from_f64(x: f64) -> Self {
        Var::Const(x)
    }

    fn primal(self) -> f64 {
        self.value()
    }

    fn sin(self) -> Self {
        self.unary(UnaryKind::Sin)
    }
    fn cos(self) -> Self {
        self.unary(UnaryKind::Cos)
    }
    fn exp(self) -> Self {
        self.unary(UnaryKind::Exp)
    }
    fn ln(self) -> Self {
        self.unary(UnaryKind::Ln)
    }
    fn ln_1p(self) -> Self {
        self.unary(UnaryKind::Ln1p)
    }
    fn sqrt(self) -> Self {
        self.unary(UnaryKind::Sqrt)
    }
    fn abs(self) -> Self {
        self.unary(UnaryKind::Abs)
    }
    fn powi(self, n: i32) -> Self {
        self.unary(UnaryKind::Powi(n))
    }
    fn recip(self) -> Self {
        self.unary(UnaryKind::Recip)
    }
    fn softplus(self) -> Self {
        self.unary(UnaryKind::Softplus)
    }
    fn sigmoid(self) -> Self {
        self.unary(UnaryKind::Sigmoid)
    }
}
