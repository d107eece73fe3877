//! Embedding voxel calcification segmentations into labeled tetrahedral heart meshes.
//!
//! The pipeline runs in stages: segmentation post-processing against the heart
//! mesh, background mesh generation around the aortic root, differentiable
//! marching tetrahedra with node/SDF optimization, constrained remeshing of the
//! free surface, and final tetrahedralization with node stitching.
//!
//! Coordinates are millimetres in the crop frame.

pub mod assemble;
pub mod bgmesh;
pub mod dmtet;
pub mod error;
pub mod geom;
pub mod mesh;
pub mod metrics;
pub mod pipeline;
pub mod postprocess;
pub mod remesh;
pub mod seg_losses;
pub mod spatial;
pub mod voxelgrid;

pub use error::{CmacError, Result};
pub use mesh::{Component, TetMesh, TriSurface};
pub use voxelgrid::{LabelGrid, ScalarGrid, VoxelGrid};

pub type Vec3 = nalgebra::Vector3<f64>;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/voxels.md")]
    mod voxels {}
    #[doc = include_str!("../../../book/src/marching.md")]
    mod marching {}
    #[doc = include_str!("../../../book/src/optimization.md")]
    mod optimization {}
    #[doc = include_str!("../../../book/src/remeshing.md")]
    mod remeshing {}
    #[doc = include_str!("../../../book/src/assembly.md")]
    mod assembly {}
    #[doc = include_str!("../../../book/src/metrics.md")]
    mod metrics {}
    #[doc = include_str!("../../../book/src/losses.md")]
    mod losses {}
}
