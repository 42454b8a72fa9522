use nalgebra::{Matrix3, Point3};

use super::{GeometryError, KnnIndex};

/// Per-point curvature as PCA surface variation.
///
/// For each point the covariance matrix of its `k`-neighbourhood (the point
/// itself plus its `k - 1` nearest neighbours) is eigen-decomposed, and the
/// curvature is
///
/// ```text
/// sigma = lambda_0 / (lambda_0 + lambda_1 + lambda_2)
/// ```
///
/// with eigenvalues sorted ascending. The smallest eigenvalue measures
/// variance off the local fitting plane, so `sigma` is 0 on exact planes,
/// grows with local bending, and is bounded above by 1/3 (isotropic
/// scatter). Because covariance eigenvalues are invariant to rotation and
/// translation and `sigma` is a ratio, the estimate is also invariant to
/// uniform scaling — a property the naturalness metrics rely on.
///
/// Degenerate neighbourhoods (all points coincident, zero covariance) get
/// curvature 0.
pub fn estimate_curvature(points: &[Point3<f64>], k: usize) -> Result<Vec<f64>, GeometryError> {
    let index = KnnIndex::build(points);
    estimate_curvature_with_index(&index, k)
}

/// [`estimate_curvature`] against a prebuilt index, for callers that reuse
/// the index across several passes over the same cloud.
pub fn estimate_curvature_with_index(
    index: &KnnIndex,
    k: usize,
) -> Result<Vec<f64>, GeometryError> {
    if k < 3 || k > index.len() {
        return Err(GeometryError::BadNeighborCount {
            k,
            n: index.len(),
            reason: "curvature requires 3 <= k <= point count",
        });
    }

    let mut out = Vec::with_capacity(index.len());
    for i in 0..index.len() {
        let hood = index.query(&index.point(i), k)?;
        out.push(surface_variation(index, &hood));
    }
    Ok(out)
}

fn surface_variation(index: &KnnIndex, hood: &[(usize, f64)]) -> f64 {
    let n = hood.len() as f64;
    let mut mean = nalgebra::Vector3::zeros();
    for (j, _) in hood {
        mean += index.point(*j).coords;
    }
    mean /= n;

    let mut cov = Matrix3::zeros();
    for (j, _) in hood {
        let d = index.point(*j).coords - mean;
        cov += d * d.transpose();
    }
    cov /= n;

    let trace = cov.trace();
    if trace < 1e-30 {
        return 0.0;
    }
    let eigen = cov.symmetric_eigen();
    let lambda_min = eigen.eigenvalues.iter().fold(f64::INFINITY, |a, &b| a.min(b));
    // Eigen-solver jitter can push the smallest eigenvalue epsilon-negative.
    (lambda_min.max(0.0) / trace).min(1.0 / 3.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{RngExt, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn grid_plane(n_side: usize) -> Vec<Point3<f64>> {
        let mut pts = Vec::new();
        for i in 0..n_side {
            for j in 0..n_side {
                pts.push(Point3::new(i as f64 * 0.1, j as f64 * 0.1, 0.0));
            }
        }
        pts
    }

    fn fibonacci_sphere(n: usize) -> Vec<Point3<f64>> {
        let golden = std::f64::consts::PI * (3.0 - 5.0f64.sqrt());
        (0..n)
            .map(|i| {
                let y = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
                let r = (1.0 - y * y).sqrt();
                let t = golden * i as f64;
                Point3::new(r * t.cos(), y, r * t.sin())
            })
            .collect()
    }

    #[test]
    fn plane_has_zero_curvature() {
        let pts = grid_plane(8);
        for sigma in estimate_curvature(&pts, 9).unwrap() {
            assert!(sigma.abs() < 1e-12, "plane curvature {sigma} not ~0");
        }
    }

    #[test]
    fn sphere_curvature_is_positive_and_bounded() {
        let pts = fibonacci_sphere(400);
        let sigmas = estimate_curvature(&pts, 16).unwrap();
        for sigma in &sigmas {
            assert!(*sigma > 0.0 && *sigma <= 1.0 / 3.0);
        }
        let mean = sigmas.iter().sum::<f64>() / sigmas.len() as f64;
        assert!(mean > 1e-4, "sphere should bend everywhere, got mean {mean}");
    }

    #[test]
    fn invariant_under_rigid_motion_and_uniform_scale() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let pts: Vec<Point3<f64>> = (0..200)
            .map(|_| {
                Point3::new(
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    (rng.random_range(-1.0..1.0f64)).sin() * 0.3,
                )
            })
            .collect();

        let rot = nalgebra::Rotation3::from_euler_angles(0.3, -1.1, 2.4);
        let shift = nalgebra::Vector3::new(5.0, -2.0, 0.7);
        let scale = 3.7;
        let moved: Vec<Point3<f64>> = pts
            .iter()
            .map(|p| Point3::from(scale * (rot * p).coords + shift))
            .collect();

        let base = estimate_curvature(&pts, 12).unwrap();
        let transformed = estimate_curvature(&moved, 12).unwrap();
        for (a, b) in base.iter().zip(&transformed) {
            assert!(
                (a - b).abs() < 1e-3,
                "curvature not invariant: {a} vs {b}"
            );
        }
    }

    #[test]
    fn coincident_neighborhood_gets_zero() {
        let mut pts = vec![Point3::new(1.0, 2.0, 3.0); 5];
        pts.push(Point3::new(1.0, 2.0, 3.0));
        let sigmas = estimate_curvature(&pts, 4).unwrap();
        assert!(sigmas.iter().all(|s| *s == 0.0));
    }

    #[test]
    fn rejects_bad_k() {
        let pts = grid_plane(3);
        assert!(estimate_curvature(&pts, 2).is_err());
        assert!(estimate_curvature(&pts, 10).is_err());
    }
}
