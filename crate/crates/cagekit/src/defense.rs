//! Training-free input defenses: random point dropping and statistical
//! outlier removal, plus re-evaluation of attack results behind them.
//!
//! Both defenses purify a cloud before it reaches the classifier. Random
//! sampling destroys carefully-placed perturbation mass by discarding an
//! unpredictable half of it; outlier removal targets points that sit
//! conspicuously far from their neighbours — exactly the signature that
//! point-wise gradient attacks leave behind and cage deformations avoid.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attack::AttackResult;
use crate::geometry::{GeometryError, KnnIndex, PointCloud};
use crate::net::PointClassifier;

#[derive(Debug, Error)]
pub enum DefenseError {
    #[error("cannot drop {drop} of {n} points")]
    DropTooLarge { drop: usize, n: usize },
    #[error("result {index} carries no label to judge success against")]
    MissingLabel { index: usize },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Parameters for the defense stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DefenseConfig {
    /// Points removed by simple random sampling.
    pub srs_drop: usize,
    /// Neighbour count for the outlier-removal distance statistic.
    pub sor_k: usize,
    /// Outlier threshold: keep points with mean-NN-distance within
    /// `mean + alpha * std` of the cloud-wide statistics.
    pub sor_alpha: f64,
    pub seed: u64,
}

impl Default for DefenseConfig {
    fn default() -> Self {
        Self {
            srs_drop: 500,
            sor_k: 2,
            sor_alpha: 1.1,
            seed: 0,
        }
    }
}

/// One concrete defense to apply to a cloud.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Defense {
    /// Keep a uniform random subset, dropping `drop` points. Each sample
    /// in a batch uses `seed` offset by its index, so batches are
    /// deterministic without sharing one subset pattern.
    Srs { drop: usize, seed: u64 },
    /// Statistical outlier removal with `k` neighbours and multiplier
    /// `alpha`.
    Sor { k: usize, alpha: f64 },
}

/// Simple random sampling: keeps a uniform random subset of
/// `len - drop` points, in their original relative order, untouched.
pub fn srs(cloud: &PointCloud, drop: usize, seed: u64) -> Result<PointCloud, DefenseError> {
    let n = cloud.len();
    if drop >= n {
        return Err(DefenseError::DropTooLarge { drop, n });
    }
    // Partial Fisher-Yates: after `keep` swaps the prefix is a uniform
    // sample; sorting restores input order for the survivors.
    let keep = n - drop;
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in 0..keep.min(n - 1) {
        let j = rng.random_range(i..n);
        order.swap(i, j);
    }
    let mut kept: Vec<usize> = order[..keep].to_vec();
    kept.sort_unstable();

    let mut out = PointCloud::new(kept.into_iter().map(|i| cloud.points[i]).collect());
    out.label = cloud.label;
    Ok(out)
}

/// Statistical outlier removal: computes each point's mean distance to
/// its `k` nearest neighbours (self excluded) and removes the points
/// whose statistic exceeds `mean + alpha * std` of the whole cloud
/// (population std; equality survives). Survivors keep their values and
/// order.
pub fn sor(cloud: &PointCloud, k: usize, alpha: f64) -> Result<PointCloud, DefenseError> {
    let index = KnnIndex::build(&cloud.points);
    let n = cloud.len();
    let mut stats = Vec::with_capacity(n);
    for i in 0..n {
        let hood = index.neighbors_of(i, k)?;
        stats.push(hood.iter().map(|(_, d)| d).sum::<f64>() / k as f64);
    }
    let mean = stats.iter().sum::<f64>() / n as f64;
    let var = stats.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / n as f64;
    let threshold = mean + alpha * var.sqrt();

    let mut out = PointCloud::new(
        cloud
            .points
            .iter()
            .zip(&stats)
            .filter(|(_, d)| **d <= threshold)
            .map(|(p, _)| *p)
            .collect(),
    );
    out.label = cloud.label;
    Ok(out)
}

/// Applies `defense` to one cloud; `sample_index` decorrelates the
/// random-sampling pattern across a batch.
pub fn apply(
    cloud: &PointCloud,
    defense: &Defense,
    sample_index: usize,
) -> Result<PointCloud, DefenseError> {
    match defense {
        Defense::Srs { drop, seed } => srs(cloud, *drop, seed.wrapping_add(sample_index as u64)),
        Defense::Sor { k, alpha } => sor(cloud, *k, *alpha),
    }
}

/// Re-evaluates attack success behind a defense: each adversarial cloud
/// is purified, re-classified, and counted as a surviving success when
/// the prediction still differs from the cloud's label. Returns the
/// post-defense success rate.
pub fn evaluate_under_defense(
    model: &PointClassifier,
    results: &[AttackResult],
    defense: &Defense,
) -> Result<f64, DefenseError> {
    assert!(!results.is_empty(), "post-defense rate over an empty batch");
    let mut surviving = 0usize;
    for (i, result) in results.iter().enumerate() {
        let label = result
            .adversarial
            .label
            .ok_or(DefenseError::MissingLabel { index: i })?;
        let purified = apply(&result.adversarial, defense, i)?;
        if model.predict(&purified.points) != label {
            surviving += 1;
        }
    }
    Ok(surviving as f64 / results.len() as f64)
}

/// One row of the defense sweep: an attack's success rate undefended and
/// behind each defense.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DefenseSweepRow {
    pub attack: String,
    pub undefended: f64,
    pub srs: f64,
    pub sor: f64,
}

/// Writes the attack-by-defense success-rate table as CSV, with `#`
/// header lines recording the defense parameters.
pub fn write_defense_csv<P: AsRef<Path>>(
    path: P,
    config: &DefenseConfig,
    rows: &[DefenseSweepRow],
) -> Result<(), DefenseError> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(
        w,
        "# post-defense attack success rates; srs drops {} points (seed {}), sor k={} alpha={}",
        config.srs_drop, config.seed, config.sor_k, config.sor_alpha
    )?;
    writeln!(w, "attack,none,srs,sor")?;
    for r in rows {
        writeln!(
            w,
            "{},{:.4},{:.4},{:.4}",
            r.attack, r.undefended, r.srs, r.sor
        )?;
    }
    w.flush()?;
    Ok(())
}
