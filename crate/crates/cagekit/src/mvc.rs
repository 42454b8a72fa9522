//! Mean value coordinates for closed triangle cages.
//!
//! Binding a point cloud to a cage expresses every point as an affine
//! combination of the cage vertices, `p_i = sum_j lambda_ij * c_j` with
//! `sum_j lambda_ij = 1`. The weights depend only on the rest pose, so the
//! cloud can be re-posed by moving cage vertices (**deform**) and gradients
//! with respect to the deformed points can be routed back onto the cage
//! (**pullback**), both as plain matrix products.
//!
//! Weights follow the classic spherical-triangle construction for closed
//! meshes: each face contributes according to the solid-angle geometry it
//! subtends from the query point. Weights are smooth inside the cage and
//! reproduce linear functions exactly; for non-convex cages some weights go
//! negative, which is expected and harmless for deformation.

use std::fs;
use std::path::Path;

use nalgebra::{Point3, Vector3};
use thiserror::Error;

use crate::geometry::{PointCloud, TriMesh};

/// Distance below which a query point is treated as coincident with a cage
/// vertex and receives an indicator row.
const VERTEX_EPS: f64 = 1e-10;
/// Spherical-excess threshold for treating a query point as lying on a face.
const ON_FACE_EPS: f64 = 1e-8;
/// Faces whose spherical geometry degenerates below this are coplanar with
/// the query point but do not contain it; they contribute nothing.
const COPLANAR_EPS: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum MvcError {
    #[error("point {index} lies outside the cage (winding number {winding:.4})")]
    PointOutsideCage { index: usize, winding: f64 },
    #[error("cage mesh is unusable: {details}")]
    InvalidCage { details: String },
    #[error("coordinate matrix binds {expected} cage vertices, got {actual}")]
    CageSizeMismatch { expected: usize, actual: usize },
    #[error("coordinate matrix binds {expected} points, got {actual} gradients")]
    PointCountMismatch { expected: usize, actual: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("bad coordinate file: {0}")]
    Format(String),
}

/// A dense row-major matrix of mean value coordinates: one row per bound
/// point, one column per cage vertex.
#[derive(Debug, Clone, PartialEq)]
pub struct MvcCoords {
    rows: usize,
    cols: usize,
    weights: Vec<f64>,
}

impl MvcCoords {
    /// Computes coordinates of every cloud point with respect to `cage`.
    ///
    /// The cage must be a closed, consistently oriented manifold. Points on
    /// the cage surface get exact limit weights (vertex indicator or in-face
    /// barycentric rows); points outside the cage are rejected with their
    /// index and winding number.
    pub fn bind(cloud: &PointCloud, cage: &TriMesh) -> Result<Self, MvcError> {
        let report = cage.validate();
        if !report.is_valid_cage() {
            return Err(MvcError::InvalidCage {
                details: format!(
                    "closed={} manifold={} oriented={} euler={} signed_volume={:.3e}",
                    report.closed,
                    report.manifold,
                    report.consistently_oriented,
                    report.euler_characteristic,
                    report.signed_volume
                ),
            });
        }

        let m = cage.vertices.len();
        let mut weights = vec![0.0f64; cloud.len() * m];
        // Scratch reused across points.
        let mut dist = vec![0.0f64; m];
        let mut unit = vec![Vector3::zeros(); m];

        for (index, p) in cloud.points.iter().enumerate() {
            let row = &mut weights[index * m..(index + 1) * m];
            point_row(p, cage, &mut dist, &mut unit, row)
                .map_err(|winding| MvcError::PointOutsideCage { index, winding })?;
        }

        Ok(Self {
            rows: cloud.len(),
            cols: m,
            weights,
        })
    }

    pub fn num_points(&self) -> usize {
        self.rows
    }

    pub fn num_cage_vertices(&self) -> usize {
        self.cols
    }

    /// Weight row of the `i`-th bound point.
    pub fn row(&self, i: usize) -> &[f64] {
        &self.weights[i * self.cols..(i + 1) * self.cols]
    }

    /// Fraction of all weights that are negative. Non-zero on non-convex
    /// cages; useful as a diagnostic, not an error.
    pub fn negative_fraction(&self) -> f64 {
        if self.weights.is_empty() {
            return 0.0;
        }
        let neg = self.weights.iter().filter(|w| **w < 0.0).count();
        neg as f64 / self.weights.len() as f64
    }

    /// Applies the coordinates to a (possibly moved) set of cage vertices,
    /// producing the deformed points `P' = Lambda * C'`.
    pub fn deform(&self, cage_vertices: &[Point3<f64>]) -> Result<Vec<Point3<f64>>, MvcError> {
        if cage_vertices.len() != self.cols {
            return Err(MvcError::CageSizeMismatch {
                expected: self.cols,
                actual: cage_vertices.len(),
            });
        }
        let mut out = Vec::with_capacity(self.rows);
        for i in 0..self.rows {
            let row = self.row(i);
            let mut acc = Vector3::zeros();
            for (w, c) in row.iter().zip(cage_vertices) {
                acc += *w * c.coords;
            }
            out.push(Point3::from(acc));
        }
        Ok(out)
    }

    /// Routes per-point gradients back to the cage vertices:
    /// `G_cage = Lambda^T * G_points`. This is the exact adjoint of
    /// [`deform`](Self::deform), since deformation is linear in the cage.
    pub fn pullback(&self, point_grads: &[Vector3<f64>]) -> Result<Vec<Vector3<f64>>, MvcError> {
        if point_grads.len() != self.rows {
            return Err(MvcError::PointCountMismatch {
                expected: self.rows,
                actual: point_grads.len(),
            });
        }
        let mut out = vec![Vector3::zeros(); self.cols];
        for (i, g) in point_grads.iter().enumerate() {
            for (j, w) in self.row(i).iter().enumerate() {
                out[j] += *w * *g;
            }
        }
        Ok(out)
    }

    /// Serialises as `rows: u64 LE, cols: u64 LE, weights: rows*cols f64 LE`
    /// in row-major order.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(16 + 8 * self.weights.len());
        buf.extend_from_slice(&(self.rows as u64).to_le_bytes());
        buf.extend_from_slice(&(self.cols as u64).to_le_bytes());
        for w in &self.weights {
            buf.extend_from_slice(&w.to_le_bytes());
        }
        buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, MvcError> {
        if bytes.len() < 16 {
            return Err(MvcError::Format(format!(
                "file too short for header: {} bytes",
                bytes.len()
            )));
        }
        let rows = u64::from_le_bytes(bytes[0..8].try_into().unwrap()) as usize;
        let cols = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let expected = rows
            .checked_mul(cols)
            .and_then(|n| n.checked_mul(8))
            .and_then(|n| n.checked_add(16))
            .ok_or_else(|| MvcError::Format("dimension overflow".into()))?;
        if bytes.len() != expected {
            return Err(MvcError::Format(format!(
                "expected {expected} bytes for a {rows}x{cols} matrix, found {}",
                bytes.len()
            )));
        }
        let weights = bytes[16..]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(Self {
            rows,
            cols,
            weights,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), MvcError> {
        Ok(fs::write(path, self.to_bytes())?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, MvcError> {
        Self::from_bytes(&fs::read(path)?)
    }
}

/// Fills `row` with the weights of `p`; on an outside point returns
/// `Err(winding_number)`.
fn point_row(
    p: &Point3<f64>,
    cage: &TriMesh,
    dist: &mut [f64],
    unit: &mut [Vector3<f64>],
    row: &mut [f64],
) -> Result<(), f64> {
    row.fill(0.0);

    for (j, c) in cage.vertices.iter().enumerate() {
        let diff = c - p;
        let d = diff.norm();
        if d < VERTEX_EPS {
            row[j] = 1.0;
            return Ok(());
        }
        dist[j] = d;
        unit[j] = diff / d;
    }

    // Total solid angle, accumulated alongside the weights so outside
    // points can be rejected without a second sweep.
    let mut omega = 0.0f64;

    for face in &cage.faces {
        let (i0, i1, i2) = (face[0], face[1], face[2]);
        let u = [unit[i0], unit[i1], unit[i2]];
        let d = [dist[i0], dist[i1], dist[i2]];

        let det = u[0].dot(&u[1].cross(&u[2]));
        omega += 2.0 * (det).atan2(1.0 + u[0].dot(&u[1]) + u[1].dot(&u[2]) + u[2].dot(&u[0]));

        // Edge lengths of the spherical triangle, then its angles.
        let mut theta = [0.0f64; 3];
        for k in 0..3 {
            let l = (u[(k + 1) % 3] - u[(k + 2) % 3]).norm();
            theta[k] = 2.0 * (0.5 * l).clamp(-1.0, 1.0).asin();
        }
        let h = 0.5 * (theta[0] + theta[1] + theta[2]);

        if std::f64::consts::PI - h < ON_FACE_EPS {
            // The face fills half the view sphere: p lies on it. Its
            // 2D barycentric weights are the exact limit; every other
            // face's contribution vanishes.
            row.fill(0.0);
            let mut w = [0.0f64; 3];
            let mut sum = 0.0;
            for k in 0..3 {
                w[k] = theta[k].sin() * d[(k + 2) % 3] * d[(k + 1) % 3];
                sum += w[k];
            }
            row[i0] = w[0] / sum;
            row[i1] = w[1] / sum;
            row[i2] = w[2] / sum;
            return Ok(());
        }

        let mut c = [0.0f64; 3];
        let mut s = [0.0f64; 3];
        let mut skip = false;
        for k in 0..3 {
            let denom = theta[(k + 1) % 3].sin() * theta[(k + 2) % 3].sin();
            c[k] = (2.0 * h.sin() * (h - theta[k]).sin()) / denom - 1.0;
            // max() drops NaNs from fully degenerate faces, so they fall
            // into the coplanar skip below.
            s[k] = det.signum() * (1.0 - c[k] * c[k]).max(0.0).sqrt();
            if s[k].abs() <= COPLANAR_EPS {
                skip = true;
            }
        }
        if skip {
            // p is coplanar with the face but outside it.
            continue;
        }

        for k in 0..3 {
            let num = theta[k] - c[(k + 1) % 3] * theta[(k + 2) % 3]
                - c[(k + 2) % 3] * theta[(k + 1) % 3];
            let den = d[k] * theta[(k + 1) % 3].sin() * s[(k + 2) % 3];
            row[face[k]] += num / den;
        }
    }

    let winding = omega / (4.0 * std::f64::consts::PI);
    if winding < 0.5 {
        return Err(winding);
    }

    let total: f64 = row.iter().sum();
    for w in row.iter_mut() {
        *w /= total;
    }
    Ok(())
}
