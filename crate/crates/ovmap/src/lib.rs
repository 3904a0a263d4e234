//! Incremental object-centric volumetric mapping.
//!
//! `ovmap` fuses posed depth frames and externally supplied instance
//! segmentation masks into a globally consistent TSDF voxel map whose
//! segments carry persistent geometric, instance, and semantic labels.
//!
//! The per-frame loop has four stages:
//!
//! 1. **Geometric segmentation**: the depth image is decomposed into
//!    convex 3D segments bounded by concave junctions and depth
//!    discontinuities ([`segmentation`]).
//! 2. **Semantic refinement**: 2D instance masks are overlaid on the
//!    geometric regions to attach instance and class labels and to group
//!    over-segmented parts of non-convex objects ([`masks`]).
//! 3. **Data association**: frame segments and frame instances are
//!    matched to persistent map labels via 3D overlap counts and
//!    co-observation statistics ([`association`]).
//! 4. **Map integration**: depth and label information is fused into a
//!    voxel-hashed TSDF volume with per-voxel label voting ([`map`]).
//!
//! A synthetic scene oracle ([`synth`]) and a 3D instance-segmentation
//! evaluator ([`eval`]) close the loop for testing and benchmarking, and
//! [`pipeline`] orchestrates full dataset runs.

pub mod association;
pub mod config;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod labels;
pub mod map;
pub mod masks;
pub mod pipeline;
pub mod segmentation;
pub mod synth;

pub use config::PipelineConfig;
pub use error::{Error, Result};
pub use geometry::{CameraIntrinsics, DepthFrame, Projection, RigidPose, VertexMap};
pub use labels::{ClassId, InstanceLabel, SegmentLabel};

#[cfg(doctest)]
mod book;
