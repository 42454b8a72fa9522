use nalgebra::{Point3, Vector3};
use sha2::{Digest, Sha256};

use super::GeometryError;

/// An unordered set of 3D points, optionally tagged with a class label.
///
/// Clouds are stored as plain `Point3<f64>` vectors; all algorithms in the
/// crate treat the index of a point as its identity, so operations that
/// reorder or drop points say so explicitly.
///
/// # Example
///
/// ```
/// use cagekit::geometry::PointCloud;
/// use nalgebra::Point3;
///
/// let mut cloud = PointCloud::new(vec![
///     Point3::new(1.0, 0.0, 0.0),
///     Point3::new(3.0, 0.0, 0.0),
/// ]);
/// let norm = cloud.normalize().unwrap();
/// assert_eq!(norm.center, nalgebra::Vector3::new(2.0, 0.0, 0.0));
/// assert_eq!(norm.scale, 1.0);
/// assert_eq!(cloud.points[1], Point3::new(1.0, 0.0, 0.0));
/// ```
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Point3<f64>>,
    pub label: Option<usize>,
}

/// The rigid-plus-scale transform removed by [`PointCloud::normalize`].
///
/// `apply` maps a point from the original frame into the normalised frame;
/// `invert` maps it back.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Normalization {
    pub center: Vector3<f64>,
    pub scale: f64,
}

impl Normalization {
    pub fn apply(&self, p: &Point3<f64>) -> Point3<f64> {
        Point3::from((p - self.center) / self.scale)
    }

    pub fn invert(&self, p: &Point3<f64>) -> Point3<f64> {
        Point3::from(p.coords * self.scale + self.center)
    }
}

impl PointCloud {
    pub fn new(points: Vec<Point3<f64>>) -> Self {
        Self {
            points,
            label: None,
        }
    }

    pub fn with_label(points: Vec<Point3<f64>>, label: usize) -> Self {
        Self {
            points,
            label: Some(label),
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn centroid(&self) -> Result<Point3<f64>, GeometryError> {
        if self.points.is_empty() {
            return Err(GeometryError::EmptyCloud);
        }
        let sum: Vector3<f64> = self.points.iter().map(|p| p.coords).sum();
        Ok(Point3::from(sum / self.points.len() as f64))
    }

    /// Largest distance from the origin to any point.
    pub fn max_norm(&self) -> f64 {
        self.points
            .iter()
            .map(|p| p.coords.norm())
            .fold(0.0, f64::max)
    }

    /// Largest pairwise distance. Exhaustive, O(n²).
    pub fn diameter(&self) -> f64 {
        let mut best = 0.0f64;
        for i in 0..self.points.len() {
            for j in (i + 1)..self.points.len() {
                best = best.max((self.points[i] - self.points[j]).norm());
            }
        }
        best
    }

    /// Centres the cloud on its centroid and scales the farthest point onto
    /// the unit sphere, returning the transform that was removed.
    ///
    /// Fails when the cloud is empty or every point coincides (no scale can
    /// be recovered from a single location).
    pub fn normalize(&mut self) -> Result<Normalization, GeometryError> {
        let center = self.centroid()?.coords;
        for p in &mut self.points {
            p.coords -= center;
        }
        let scale = self.max_norm();
        if scale < 1e-12 {
            return Err(GeometryError::DegenerateCloud {
                details: format!("all {} points coincide", self.points.len()),
            });
        }
        for p in &mut self.points {
            p.coords /= scale;
        }
        Ok(Normalization { center, scale })
    }

    /// Hex digest identifying the exact point data (order-sensitive, first
    /// 16 hex chars of SHA-256 over little-endian coordinate bytes).
    ///
    /// Two clouds share a hash iff their coordinates are bitwise equal, so
    /// the hash doubles as a reproducibility check across runs.
    pub fn content_hash(&self) -> String {
        let mut hasher = Sha256::new();
        for p in &self.points {
            for c in [p.x, p.y, p.z] {
                hasher.update(c.to_le_bytes());
            }
        }
        let digest = hasher.finalize();
        let mut out = String::with_capacity(16);
        for byte in digest.iter().take(8) {
            out.push_str(&format!("{byte:02x}"));
        }
        out
    }
}
