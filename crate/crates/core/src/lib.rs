//! Multi-object tracking that treats detector outputs as random sets.
//!
//! * [`rfs`]: particle filter where each particle samples its own detections.
//! * [`output_frame`]: labeled summaries and population regeneration.
//! * [`grid_tracker`]: occupancy-grid tracker with per-cell uncertainty.
//! * [`metrics`]: CLEAR-MOT evaluation.
//! * [`sim`]: ground truth and an emulated uncertainty-aware detector.
//! * [`harness`]: configs, runs and comparisons.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod geometry;
pub mod gmm;
pub mod grid_tracker;
pub mod harness;
pub mod io;
pub mod metrics;
pub mod output_frame;
pub mod rfs;
pub mod rng;
pub mod sim;

pub use error::{Error, Result};
