//! Topology-preserving spline segmentation of voxel data.
//!
//! The crate turns grayscale voxel grids into smooth B-spline level sets,
//! detects topology changes introduced by the smoothing with a moving-window
//! Euler-characteristic comparison, repairs them by local truncated
//! hierarchical B-spline refinement, and integrates over the resulting
//! geometry with a finite cell tessellation. A small 2D immersed solver
//! (linear elasticity and Stokes flow) sits on top.
//!
//! The crate is `no_std` and only needs `alloc`. File formats, configuration
//! and the command line live in the `scaniga` companion crate.

#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod bspline;
pub mod hierarchy;
pub mod kernel;
pub mod levelset;
pub mod linalg;
mod math;
pub mod phantom;
pub mod quadrature;
pub mod solver;
pub mod tessellation;
pub mod thb;
pub mod topo;
pub mod voxel;

pub use bspline::{BSpline1d, UniformBSplineBasis};
pub use hierarchy::{CellId, HierarchicalMesh};
pub use levelset::{ConvolutionCoefficients, LevelSet, UniformField};
pub use solver::{BackgroundDiscretization, ElasticityProblem, StokesProblem};
pub use tessellation::{QuadratureSchedule, TessellatedDomain};
pub use thb::{ThbBasis, ThbField};
pub use voxel::{BinaryImage, Connectivity, EulerSummary, RegionLabeling, Shape, VoxelGrid};
