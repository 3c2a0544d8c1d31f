//! Synthetic data generation, evaluation metrics and artifact emission.

pub mod scene3d;
pub mod toy;

pub use toy::{gen_toy_video, GtToyWarp, PatchSpec, ToyGroundTruth, ToySceneSpec};
