//! Learned keypoint detection and description for bathymetric point-cloud
//! submaps: synthetic surveys, a small reverse-mode autodiff engine, the
//! descriptor network and its triplet training, loop-closure detection,
//! coarse-to-fine registration and a Harris3D/SHOT bag-of-words baseline.

// Validation is written as `!(x > 0.0)` on purpose: NaN must fail it.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autodiff;
pub mod baseline;
pub mod diagnostics;
pub mod error;
pub mod geometry;
pub mod io;
pub mod loop_closure;
pub mod net;
pub mod registration;
pub mod seed;
pub(crate) mod spatial;
pub mod synth;
pub mod train;

#[cfg(test)]
mod testutil;

pub use error::{Error, Result};
pub use geometry::{AugmentParams, Point3, PointCloud, Pose, Submap};
