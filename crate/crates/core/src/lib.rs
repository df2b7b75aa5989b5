//! Segmentation toolkit for tree-like 3D structures.
//!
//! The crate covers the full refinement workflow: binary phantom trees with
//! known centerline graphs, injection of structural label errors (missing
//! terminal branches, branch discontinuities, vessel gaps), a small
//! differentiable 3D convolutional model with Dice and adversarial losses,
//! patch-based training plus sliding-window inference, and topology-aware
//! evaluation (Dice, centerline completeness, leakage, continuity gaps).
//!
//! Per-voxel loops run data-parallel on rayon when the `parallel` feature is
//! enabled (the default) and fall back to equivalent sequential loops without
//! it. Results are bit-identical either way: parallel work is split into
//! fixed-order chunks that are combined deterministically.

pub mod error;
pub mod errorsynth;
pub mod metrics;
pub mod model;
pub mod par;
pub mod phantom;
pub mod pipeline;
pub mod rng;
pub mod skeleton;
pub mod volume;

pub use error::{Error, Result};
