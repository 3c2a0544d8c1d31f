//! Deformation and radiance fields, trainable and analytic.

pub mod checkpoint;
pub mod mlp;
pub mod posenc;
pub mod radiance;
pub mod warp;

pub use mlp::{Dense, Mlp, TapedMlp};
pub use posenc::{posenc, posenc_dim};
pub use radiance::{Grid2D, MlpRadiance, MlpRadianceSpec, Radiance3, RadianceBlocks, TapedRadiance};
pub use warp::{
    AffineWarp2, AffineWarp3, AnalyticWarp2, AnalyticWarp3, MlpWarp2, MlpWarp3, MlpWarpSpec,
    ShearSine2, ShearSine3, TapedMlpWarp2, TapedMlpWarp3, TapedWarp2, TapedWarp3, Trajectory2,
    Trajectory3, WarpBlocks, WarpField2, WarpField3,
};
