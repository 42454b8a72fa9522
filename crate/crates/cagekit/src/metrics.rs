//! Naturalness metrics for comparing an adversarial cloud against its
//! clean original, plus attack success-rate bookkeeping.
//!
//! Five complementary views of "how disturbed does this cloud look":
//!
//! * [`metric_knn`] — mean spacing to the nearest few points; rises when
//!   an attack tears points out of the surface.
//! * [`metric_curv`] — curvature drift against the matched clean point.
//! * [`metric_csd`] — drift of local curvature *spread*, sensitive to
//!   roughening that leaves mean curvature alone.
//! * [`metric_uni`] — absolute density-uniformity score (clustering and
//!   thinning both raise it).
//! * [`metric_lap`] — change of each point's offset from its local mean,
//!   an umbrella-operator view of surface noise.
//!
//! All of them are pure functions of the coordinates with fixed,
//! documented neighbourhood sizes; [`write_metrics_csv`] records the
//! formulas next to the numbers so a table is self-describing.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::Point3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attack::AttackResult;
use crate::geometry::{
    estimate_curvature, estimate_curvature_with_index, farthest_point_sampling, GeometryError,
    KnnIndex, PointCloud,
};

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("clouds must have matching point counts (got {expected} vs {actual})")]
    SizeMismatch { expected: usize, actual: usize },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Neighbourhood sizes and ball parameters the metric suite runs with.
/// Recorded alongside the values so reported numbers are reproducible.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MetricParams {
    pub knn_k: usize,
    pub curv_k: usize,
    pub csd_k: usize,
    pub lap_k: usize,
    pub uni_balls: usize,
    pub uni_radius_fraction: f64,
    pub uni_seed: u64,
}

impl Default for MetricParams {
    fn default() -> Self {
        Self {
            knn_k: 5,
            curv_k: 16,
            csd_k: 16,
            lap_k: 8,
            uni_balls: 32,
            uni_radius_fraction: 0.1,
            uni_seed: 0,
        }
    }
}

/// Aggregate metrics for one attack over a batch of samples.
///
/// Values are stored raw (unscaled); [`write_metrics_csv`] applies the
/// conventional display scales. Every pairwise column is zero when the
/// adversarial clouds equal the originals; `uni` is an absolute measure
/// and merely agrees across identical clouds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub asr: f64,
    pub csd: f64,
    pub curv: f64,
    pub uni: f64,
    pub knn: f64,
    pub lap: f64,
    pub params: MetricParams,
}

/// Mean over all points of the mean distance to their `k` nearest
/// neighbours (self excluded). Homogeneous degree 1 in the coordinates.
pub fn metric_knn(points: &[Point3<f64>], k: usize) -> Result<f64, MetricError> {
    let index = KnnIndex::build(points);
    let mut total = 0.0;
    for i in 0..points.len() {
        let hood = index.neighbors_of(i, k)?;
        total += hood.iter().map(|(_, d)| d).sum::<f64>() / k as f64;
    }
    Ok(total / points.len() as f64)
}

/// Mean absolute curvature drift: each adversarial point's curvature in
/// its own cloud versus the curvature of its nearest clean point in the
/// original. Zero when the clouds coincide.
pub fn metric_curv(
    original: &[Point3<f64>],
    adversarial: &[Point3<f64>],
    k: usize,
) -> Result<f64, MetricError> {
    let orig_index = KnnIndex::build(original);
    let curv_orig = estimate_curvature_with_index(&orig_index, k)?;
    let curv_adv = estimate_curvature(adversarial, k)?;

    let mut total = 0.0;
    for (p, c_adv) in adversarial.iter().zip(&curv_adv) {
        let (nn, _) = orig_index.nearest(p)?;
        total += (c_adv - curv_orig[nn]).abs();
    }
    Ok(total / adversarial.len() as f64)
}

/// Mean absolute drift of the local curvature *standard deviation*: for
/// each adversarial point, the population std of curvature over its
/// `k`-neighbourhood (self included) minus the same statistic around its
/// nearest clean point. Catches roughening that preserves mean curvature.
pub fn metric_csd(
    original: &[Point3<f64>],
    adversarial: &[Point3<f64>],
    k: usize,
) -> Result<f64, MetricError> {
    let orig_index = KnnIndex::build(original);
    let adv_index = KnnIndex::build(adversarial);
    let curv_orig = estimate_curvature_with_index(&orig_index, k)?;
    let curv_adv = estimate_curvature_with_index(&adv_index, k)?;

    let hood_std = |index: &KnnIndex, curv: &[f64], q: &Point3<f64>| -> Result<f64, MetricError> {
        let hood = index.query(q, k)?;
        let values: Vec<f64> = hood.iter().map(|(j, _)| curv[*j]).collect();
        Ok(population_std(&values))
    };

    let mut total = 0.0;
    for p in adversarial {
        let s_adv = hood_std(&adv_index, &curv_adv, p)?;
        let (nn, _) = orig_index.nearest(p)?;
        let s_orig = hood_std(&orig_index, &curv_orig, &orig_index.point(nn))?;
        total += (s_adv - s_orig).abs();
    }
    Ok(total / adversarial.len() as f64)
}

fn population_std(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt()
}

/// Absolute density-uniformity score, lower is more uniform.
///
/// `balls` probe centres are chosen by farthest point sampling, each with
/// radius `radius_fraction` of the cloud diameter. A probe contributes a
/// chi-square deviation of its point count from the surface-area
/// expectation `N * radius_fraction^2` (a sphere of the same diameter
/// would put that fraction of points inside the ball), plus the mean
/// squared relative deviation of intra-ball nearest-neighbour spacing
/// from the hexagonal-packing spacing for that count. The score is the
/// mean over probes. Deterministic given `seed`.
pub fn metric_uni(
    points: &[Point3<f64>],
    balls: usize,
    radius_fraction: f64,
    seed: u64,
) -> Result<f64, MetricError> {
    let centers = farthest_point_sampling(points, balls, seed)?;
    let mut diameter = 0.0f64;
    for i in 0..points.len() {
        for j in (i + 1)..points.len() {
            diameter = diameter.max((points[i] - points[j]).norm());
        }
    }
    let radius = radius_fraction * diameter;
    let expected = points.len() as f64 * radius_fraction * radius_fraction;

    let mut total = 0.0;
    for &c in &centers {
        let member_ids: Vec<usize> = points
            .iter()
            .enumerate()
            .filter(|(_, p)| (*p - points[c]).norm() <= radius)
            .map(|(i, _)| i)
            .collect();
        let count = member_ids.len() as f64;
        let imbalance = (count - expected).powi(2) / expected;

        // Hexagonal-packing spacing for `count` points on a disc of this
        // radius; deviations from it flag clutter inside the ball.
        let mut clutter = 0.0;
        if member_ids.len() >= 2 {
            let ideal = (2.0 * std::f64::consts::PI * radius * radius
                / (3.0f64.sqrt() * count))
                .sqrt();
            for &i in &member_ids {
                let nearest = member_ids
                    .iter()
                    .filter(|&&j| j != i)
                    .map(|&j| (points[i] - points[j]).norm())
                    .fold(f64::INFINITY, f64::min);
                clutter += (nearest - ideal).powi(2) / ideal;
            }
            clutter /= count;
        }
        total += imbalance + clutter;
    }
    Ok(total / balls as f64)
}

/// Mean change of the umbrella vector `p - mean(kNN(p))` between matched
/// rows of the two clouds (neighbourhoods computed in each cloud
/// separately, self excluded). Requires index correspondence.
pub fn metric_lap(
    original: &[Point3<f64>],
    adversarial: &[Point3<f64>],
    k: usize,
) -> Result<f64, MetricError> {
    if original.len() != adversarial.len() {
        return Err(MetricError::SizeMismatch {
            expected: original.len(),
            actual: adversarial.len(),
        });
    }
    let delta_orig = umbrella(original, k)?;
    let delta_adv = umbrella(adversarial, k)?;
    let total: f64 = delta_orig
        .iter()
        .zip(&delta_adv)
        .map(|(a, b)| (a - b).norm())
        .sum();
    Ok(total / original.len() as f64)
}

fn umbrella(points: &[Point3<f64>], k: usize) -> Result<Vec<nalgebra::Vector3<f64>>, MetricError> {
    let index = KnnIndex::build(points);
    let mut out = Vec::with_capacity(points.len());
    for (i, p) in points.iter().enumerate() {
        let hood = index.neighbors_of(i, k)?;
        let mut mean = nalgebra::Vector3::zeros();
        for (j, _) in &hood {
            mean += points[*j].coords;
        }
        mean /= k as f64;
        out.push(p.coords - mean);
    }
    Ok(out)
}

/// Fraction of attack results whose success flag is set.
///
/// # Panics
///
/// Panics on an empty slice — a success rate over nothing is meaningless.
pub fn asr(results: &[AttackResult]) -> f64 {
    assert!(!results.is_empty(), "success rate over an empty batch");
    results.iter().filter(|r| r.success).count() as f64 / results.len() as f64
}

/// Computes the aggregate [`MetricReport`] for one attack: per-sample
/// metrics averaged over all `(original, result)` pairs.
///
/// The `knn` column is reported as the absolute *change* of the mean
/// neighbour spacing (so it is zero for an unchanged cloud), while `uni`
/// is the absolute uniformity score of the adversarial clouds.
pub fn compute_report(
    originals: &[PointCloud],
    results: &[AttackResult],
    params: &MetricParams,
) -> Result<MetricReport, MetricError> {
    assert_eq!(
        originals.len(),
        results.len(),
        "one original per attack result"
    );
    assert!(!results.is_empty(), "metrics over an empty batch");

    let mut sums = [0.0f64; 5];
    for (orig, result) in originals.iter().zip(results) {
        let p = &orig.points;
        let q = &result.adversarial.points;
        sums[0] += metric_csd(p, q, params.csd_k)?;
        sums[1] += metric_curv(p, q, params.curv_k)?;
        sums[2] += metric_uni(q, params.uni_balls, params.uni_radius_fraction, params.uni_seed)?;
        sums[3] += (metric_knn(q, params.knn_k)? - metric_knn(p, params.knn_k)?).abs();
        sums[4] += metric_lap(p, q, params.lap_k)?;
    }
    let n = results.len() as f64;
    Ok(MetricReport {
        asr: asr(results),
        csd: sums[0] / n,
        curv: sums[1] / n,
        uni: sums[2] / n,
        knn: sums[3] / n,
        lap: sums[4] / n,
        params: params.clone(),
    })
}

/// Writes labelled reports as CSV with the conventional display scales
/// (csd x10, curv x1000, knn x1000; uni and lap raw). Leading `#` lines
/// document each column's formula and scale so the file stands alone.
pub fn write_metrics_csv<P: AsRef<Path>>(
    path: P,
    rows: &[(String, MetricReport)],
) -> Result<(), MetricError> {
    let mut w = BufWriter::new(File::create(path)?);
    if let Some((_, first)) = rows.first() {
        let p = &first.params;
        writeln!(w, "# asr: fraction of adversarial clouds that flip the classifier")?;
        writeln!(
            w,
            "# csd (x10): mean |local curvature-std drift|, k={} neighbourhoods",
            p.csd_k
        )?;
        writeln!(
            w,
            "# curv (x1000): mean |curvature drift vs nearest clean point|, k={}",
            p.curv_k
        )?;
        writeln!(
            w,
            "# uni: density uniformity over {} FPS balls, radius {} of diameter, seed {}",
            p.uni_balls, p.uni_radius_fraction, p.uni_seed
        )?;
        writeln!(
            w,
            "# knn (x1000): |change of mean {}-NN spacing| vs the clean cloud",
            p.knn_k
        )?;
        writeln!(
            w,
            "# lap: mean change of the k={} umbrella vector p - mean(kNN(p))",
            p.lap_k
        )?;
    }
    writeln!(w, "attack,asr,csd,curv,uni,knn,lap")?;
    for (label, r) in rows {
        writeln!(
            w,
            "{label},{:.4},{:.4},{:.4},{:.4},{:.4},{:.4}",
            r.asr,
            r.csd * 10.0,
            r.curv * 1e3,
            r.uni,
            r.knn * 1e3,
            r.lap
        )?;
    }
    w.flush()?;
    Ok(())
}
