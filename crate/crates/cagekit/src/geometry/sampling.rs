use nalgebra::Point3;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::GeometryError;

/// Greedy farthest point sampling: returns `m` point indices, starting
/// from a seeded random index and repeatedly taking the point that
/// maximises the minimum distance to everything selected so far (ties go
/// to the lower index). Indices are returned in selection order.
pub fn farthest_point_sampling(
    points: &[Point3<f64>],
    m: usize,
    seed: u64,
) -> Result<Vec<usize>, GeometryError> {
    let n = points.len();
    if m == 0 || m > n {
        return Err(GeometryError::BadSampleCount { m, n });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let first = rng.random_range(0..n);

    let mut selected = Vec::with_capacity(m);
    let mut min_d2 = vec![f64::INFINITY; n];
    let mut current = first;
    selected.push(current);

    while selected.len() < m {
        let mut best = (f64::NEG_INFINITY, 0usize);
        for (i, p) in points.iter().enumerate() {
            let d2 = (p.coords - points[current].coords).norm_squared().min(min_d2[i]);
            min_d2[i] = d2;
            if d2 > best.0 {
                best = (d2, i);
            }
        }
        current = best.1;
        selected.push(current);
    }
    Ok(selected)
}
