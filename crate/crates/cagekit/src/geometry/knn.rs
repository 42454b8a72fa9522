use nalgebra::Point3;

use super::GeometryError;

/// Exact k-nearest-neighbour index over a fixed point set.
///
/// Queries scan every point, order candidates by squared distance, and
/// break distance ties by the lower point index. That rule is part of the
/// contract: any future accelerated implementation has to reproduce the
/// exhaustive scan exactly, which keeps every consumer (curvature,
/// metrics, outlier removal) bit-for-bit deterministic.
#[derive(Debug, Clone)]
pub struct KnnIndex {
    points: Vec<Point3<f64>>,
}

impl KnnIndex {
    pub fn build(points: &[Point3<f64>]) -> Self {
        Self {
            points: points.to_vec(),
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn point(&self, i: usize) -> Point3<f64> {
        self.points[i]
    }

    /// The `k` nearest indexed points to an arbitrary query location, as
    /// `(index, distance)` pairs sorted by ascending `(distance, index)`.
    ///
    /// If the query location coincides with an indexed point, that point is
    /// part of the result (distance 0); use [`KnnIndex::neighbors_of`] for
    /// self-excluding neighbourhoods.
    pub fn query(&self, q: &Point3<f64>, k: usize) -> Result<Vec<(usize, f64)>, GeometryError> {
        if k == 0 || k > self.points.len() {
            return Err(GeometryError::BadNeighborCount {
                k,
                n: self.points.len(),
                reason: "query requires 1 <= k <= point count",
            });
        }
        Ok(self.select(q, k, None))
    }

    /// The `k` nearest points to indexed point `i`, excluding `i` itself.
    pub fn neighbors_of(&self, i: usize, k: usize) -> Result<Vec<(usize, f64)>, GeometryError> {
        if k == 0 || k + 1 > self.points.len() {
            return Err(GeometryError::BadNeighborCount {
                k,
                n: self.points.len(),
                reason: "self-excluding query requires 1 <= k <= point count - 1",
            });
        }
        Ok(self.select(&self.points[i], k, Some(i)))
    }

    /// Index and distance of the single nearest indexed point.
    pub fn nearest(&self, q: &Point3<f64>) -> Result<(usize, f64), GeometryError> {
        Ok(self.query(q, 1)?[0])
    }

    fn select(&self, q: &Point3<f64>, k: usize, exclude: Option<usize>) -> Vec<(usize, f64)> {
        let mut candidates: Vec<(f64, usize)> = self
            .points
            .iter()
            .enumerate()
            .filter(|(i, _)| Some(*i) != exclude)
            .map(|(i, p)| ((p - q).norm_squared(), i))
            .collect();
        // (d², index) lexicographic order realises the lower-index tie rule.
        candidates.select_nth_unstable_by(k - 1, |a, b| a.partial_cmp(b).unwrap());
        let mut head: Vec<(f64, usize)> = candidates[..k].to_vec();
        head.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap());
        head.into_iter().map(|(d2, i)| (i, d2.sqrt())).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ties_resolve_to_lower_indices() {
        // Unit square: its centre is equidistant from all four corners, so
        // a k=2 query must return corners 0 and 1.
        let square = [
            Point3::new(0.0, 0.0, 0.0),
            Point3::new(1.0, 0.0, 0.0),
            Point3::new(1.0, 1.0, 0.0),
            Point3::new(0.0, 1.0, 0.0),
        ];
        let index = KnnIndex::build(&square);
        let hits = index.query(&Point3::new(0.5, 0.5, 0.0), 2).unwrap();
        let ids: Vec<usize> = hits.iter().map(|(i, _)| *i).collect();
        assert_eq!(ids, vec![0, 1]);
        for (_, d) in hits {
            assert!((d - 0.5f64.sqrt()).abs() < 1e-12);
        }
    }

    #[test]
    fn query_includes_coincident_point_neighbors_exclude_it() {
        let line = [
            Point3::new(0.0, 0.0, 0.0),
            Point3::new(1.0, 0.0, 0.0),
            Point3::new(2.5, 0.0, 0.0),
        ];
        let index = KnnIndex::build(&line);

        let hits = index.query(&line[1], 2).unwrap();
        assert_eq!(hits[0], (1, 0.0));
        assert_eq!(hits[1].0, 0);

        let nbrs = index.neighbors_of(1, 2).unwrap();
        assert_eq!(nbrs[0].0, 0);
        assert_eq!(nbrs[1].0, 2);
        assert!((nbrs[1].1 - 1.5).abs() < 1e-12);
    }

    #[test]
    fn rejects_out_of_range_k() {
        let index = KnnIndex::build(&[Point3::origin(), Point3::new(1.0, 0.0, 0.0)]);
        assert!(index.query(&Point3::origin(), 0).is_err());
        assert!(index.query(&Point3::origin(), 3).is_err());
        assert!(index.neighbors_of(0, 2).is_err());
        assert!(index.neighbors_of(0, 1).is_ok());
    }
}
