//! Sparse-view radiance fields regularized by an in-voxel transformer and a
//! voxel contrastive loss.
//!
//! Training rays are grouped by the voxels they cross. For each ray, points
//! sampled around its in-voxel segment are encoded by a small transformer
//! whose decoder predicts radiance at extra points on the segment; those are
//! inserted into the fine rendering pass. Pooled encoder features of rays in
//! the same voxel are pulled together by an InfoNCE loss.
//!
//! Everything runs on the CPU through the [`diffcore`] tape.

#![allow(
    clippy::neg_cmp_op_on_partial_ord,
    clippy::needless_range_loop,
    clippy::type_complexity
)]

pub mod cli;
pub mod diffcore;
pub mod error;
pub mod field;
pub mod geometry;
pub mod ivt;
pub mod losses;
pub mod metrics;
pub mod rendering;
pub mod scenedata;
pub mod trainer;
pub mod voxelgrid;

pub use error::{Error, Result};
