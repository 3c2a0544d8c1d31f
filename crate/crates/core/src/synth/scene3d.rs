//! Synthetic 3D scenes.
