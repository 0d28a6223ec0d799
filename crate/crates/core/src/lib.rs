//! Sparse multi-resolution voxel occupancy toolkit.
//!
//! The pipeline takes a LiDAR sweep and per-camera feature maps to scale-4
//! fused voxel features, refines the important voxels at scales 2 and 1, and
//! decodes 21-channel occupancy volumes (18 semantic + 3 visibility channels).
//! Occlusion-aware ground truth, losses and metrics live alongside.
//!
//! Numeric code is generic over [`Real`] (`f32` or `f64`); the aliases below
//! fix the scalar for the common cases.

pub mod camera;
pub mod config;
pub mod decoder;
pub mod densify;
pub mod fusion;
pub mod hvfr;
pub mod error;
pub mod lidar;
pub mod linear;
pub mod loss;
pub mod metrics;
pub mod occlusion;
pub mod pipeline;
pub mod rng;
pub mod scalar;
pub mod scene;
pub mod semantic_kitti;
pub mod voxel;

pub use error::{Error, Result};
pub use scalar::Real;
pub use voxel::{align_scale, subdivide, voxel_center, GridGeometry, SparseVoxelGrid, VoxelIndex};

pub type Grid = SparseVoxelGrid<f32>;
pub type Grid64 = SparseVoxelGrid<f64>;
pub type Geometry = GridGeometry<f32>;
pub type Geometry64 = GridGeometry<f64>;
pub type Camera = camera::CameraModel<f32>;
pub type Camera64 = camera::CameraModel<f64>;
