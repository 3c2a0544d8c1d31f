//! Differentiation engine: forward-mode jets, a reverse-accumulation tape
//! over parameter blocks, and the small-matrix algebra used by the velocity
//! operator.

pub mod jet;
pub mod linalg;
pub mod map;
pub mod tape;

pub use jet::{Jet, Jet3, Jet4};
pub use linalg::{blockinv_check, dinv3, gauss_inverse, inv3, LinalgError, Mat2, Mat3};
pub use map::{
    jacobian_spacetime, spacetime_jet2, spacetime_jet3, Composed, PointMap2, PointMap3,
    SpacetimeJet2, SpacetimeJet3,
};
pub use tape::{BlockGrads, BlockId, Grads, Tape, TapeError, TapeOp, Var};
