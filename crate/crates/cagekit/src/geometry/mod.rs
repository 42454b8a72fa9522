//! Point-cloud and triangle-mesh primitives.
//!
//! Everything downstream — cage construction, coordinate binding, attacks,
//! metrics — is built on the handful of operations in this module: cloud
//! normalisation, exact k-nearest-neighbour queries, PCA curvature
//! estimation, point/triangle distances, mesh validation, and farthest
//! point sampling. All of it is deterministic: ties are broken by index,
//! and the only randomness (the farthest-point seed) is caller-supplied.

mod cloud;
mod curvature;
mod knn;
mod mesh;
mod sampling;
mod triangle;

pub use cloud::{Normalization, PointCloud};
pub use curvature::{estimate_curvature, estimate_curvature_with_index};
pub use knn::KnnIndex;
pub use mesh::{MeshReport, TriMesh};
pub use sampling::farthest_point_sampling;
pub use triangle::{closest_point_on_triangle, point_triangle_distance};

#[cfg(test)]
pub(crate) use mesh::tests::unit_tetrahedron;

use thiserror::Error;

/// Errors raised by geometric primitives.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("point cloud is empty")]
    EmptyCloud,

    #[error("degenerate point cloud: {details}")]
    DegenerateCloud { details: String },

    #[error("bad neighbour count k={k} for {n} points ({reason})")]
    BadNeighborCount {
        k: usize,
        n: usize,
        reason: &'static str,
    },

    #[error("bad sample count m={m} for {n} points")]
    BadSampleCount { m: usize, n: usize },
}
