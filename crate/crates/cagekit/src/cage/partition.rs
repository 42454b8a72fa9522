use nalgebra::{Matrix3, Point3};

use crate::geometry::{PointCloud, TriMesh};

use super::CageError;

/// Assignment of cloud points to the tetrahedra spanned by the origin and
/// each cage face.
#[derive(Debug, Clone)]
pub struct TetraPartition {
    /// `assignment[i]` is the tetra (= face) index owning cloud point `i`.
    pub assignment: Vec<usize>,
    /// `members[t]` lists the cloud points owned by tetra `t`, ascending.
    pub members: Vec<Vec<usize>>,
    /// Number of cloud points that fell on tetra boundaries and were
    /// assigned by the nearest-centroid fallback.
    pub fallback_count: usize,
}

impl TetraPartition {
    pub fn tetra_count(&self) -> usize {
        self.members.len()
    }

    pub fn counts(&self) -> Vec<usize> {
        self.members.iter().map(Vec::len).collect()
    }
}

/// Splits the volume enclosed by a star-shaped cage into one tetrahedron
/// per face — apex at the origin, base on the face — and assigns every
/// cloud point to the tetra containing it.
///
/// Containment is decided by a strict barycentric sign test, scanning
/// faces in index order. Points that land exactly on a tetra boundary
/// (shared internal wall, the apex itself) pass no strict test and fall
/// back to the tetra with the nearest centroid; both rules are
/// deterministic, so the partition is reproducible bit for bit.
///
/// Fails with [`CageError::NotStarShaped`] if some face subtends a
/// non-positive volume with the origin, since the tetra cover of the
/// interior then breaks down.
pub fn partition_points(cage: &TriMesh, cloud: &PointCloud) -> Result<TetraPartition, CageError> {
    const EPS: f64 = 1e-12;

    // Precompute inverse base matrices; p = M * (alpha, beta, gamma).
    let mut inverses = Vec::with_capacity(cage.faces.len());
    for (fi, f) in cage.faces.iter().enumerate() {
        let m = Matrix3::from_columns(&[
            cage.vertices[f[0]].coords,
            cage.vertices[f[1]].coords,
            cage.vertices[f[2]].coords,
        ]);
        if m.determinant() <= 0.0 {
            return Err(CageError::NotStarShaped { face: fi });
        }
        inverses.push(m.try_inverse().ok_or(CageError::NotStarShaped { face: fi })?);
    }

    let centroids: Vec<Point3<f64>> = (0..cage.faces.len())
        .map(|fi| {
            let f = cage.faces[fi];
            Point3::from(
                (cage.vertices[f[0]].coords
                    + cage.vertices[f[1]].coords
                    + cage.vertices[f[2]].coords)
                    / 4.0,
            )
        })
        .collect();

    let mut assignment = Vec::with_capacity(cloud.len());
    let mut members = vec![Vec::new(); cage.faces.len()];
    let mut fallback_count = 0;

    for (pi, p) in cloud.points.iter().enumerate() {
        let mut owner = None;
        for (fi, inv) in inverses.iter().enumerate() {
            let bary = inv * p.coords;
            if bary.x > EPS && bary.y > EPS && bary.z > EPS && bary.sum() < 1.0 - EPS {
                owner = Some(fi);
                break;
            }
        }
        let owner = match owner {
            Some(fi) => fi,
            None => {
                fallback_count += 1;
                nearest_centroid(&centroids, p)
            }
        };
        assignment.push(owner);
        members[owner].push(pi);
    }

    Ok(TetraPartition {
        assignment,
        members,
        fallback_count,
    })
}

fn nearest_centroid(centroids: &[Point3<f64>], p: &Point3<f64>) -> usize {
    let mut best = (f64::INFINITY, 0usize);
    for (i, c) in centroids.iter().enumerate() {
        let d2 = (p - c).norm_squared();
        if d2 < best.0 {
            best = (d2, i);
        }
    }
    best.1
}

/// Scores each tetrahedron by the curvature and density of the points it
/// owns: `s = s_cur + lambda_density * s_den`, where `s_cur` is the mean
/// point curvature per tetra and `s_den` the owned fraction of the cloud,
/// each min–max normalised to `[0, 1]` across tetrahedra (a constant
/// component normalises to all zeros, as do empty tetrahedra before
/// normalisation).
pub fn score_tetras(
    partition: &TetraPartition,
    curvature: &[f64],
    lambda_density: f64,
) -> Vec<f64> {
    let total_points: usize = partition.members.iter().map(Vec::len).sum();
    let mut s_cur: Vec<f64> = partition
        .members
        .iter()
        .map(|pts| {
            if pts.is_empty() {
                0.0
            } else {
                pts.iter().map(|&i| curvature[i]).sum::<f64>() / pts.len() as f64
            }
        })
        .collect();
    let mut s_den: Vec<f64> = partition
        .members
        .iter()
        .map(|pts| pts.len() as f64 / total_points.max(1) as f64)
        .collect();

    min_max_normalize(&mut s_cur);
    min_max_normalize(&mut s_den);

    s_cur
        .iter()
        .zip(&s_den)
        .map(|(c, d)| c + lambda_density * d)
        .collect()
}

fn min_max_normalize(values: &mut [f64]) {
    let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let range = max - min;
    if !(range > 0.0) {
        values.iter_mut().for_each(|v| *v = 0.0);
        return;
    }
    for v in values.iter_mut() {
        *v = (*v - min) / range;
    }
}
