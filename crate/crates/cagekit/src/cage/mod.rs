//! Cage construction: wrap a normalised point cloud in a coarse, closed
//! triangle mesh that tightly follows the cloud's shape.
//!
//! The build pipeline has four stages, each usable on its own:
//!
//! 1. [`init_sphere_cage`] — an icosphere scaled to strictly enclose the
//!    cloud with a safety margin.
//! 2. [`partition_points`] — split the enclosed volume into one
//!    tetrahedron per cage face (apex at the origin) and assign every
//!    cloud point to one of them.
//! 3. [`score_tetras`] + [`subdivide`] — rank tetrahedra by how much
//!    curvature and point mass they hold, then refine the cage faces of
//!    the top-ranked ones with a conforming red–green split.
//! 4. [`optimize_vertices`] — gradient-descend the cage vertices so the
//!    cage hugs the cloud while staying smooth and evenly triangulated,
//!    never letting any cloud point escape.
//!
//! [`build_cage`] chains the stages; the subdivision and optimisation
//! stages can be disabled independently, which is how the ablation runs in
//! the experiment harness are produced.

mod icosphere;
mod optimize;
mod partition;
mod subdivision;

pub use icosphere::{icosphere, init_sphere_cage};
pub use optimize::{fit_objective, optimize_vertices, LossRecord, OptimizeConfig, OptimizeOutcome};
pub use partition::{partition_points, score_tetras, TetraPartition};
pub use subdivision::{subdivide, subdivide_flagged};

use thiserror::Error;

use crate::geometry::{estimate_curvature, GeometryError, PointCloud, TriMesh};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CageError {
    #[error("margin must exceed 1.0 to enclose the cloud, got {margin}")]
    MarginTooSmall { margin: f64 },

    #[error("cage is not star-shaped about the origin (face {face} folds past it)")]
    NotStarShaped { face: usize },

    #[error("cage mesh failed validation: {details}")]
    InvalidCage { details: String },

    #[error("score vector has {scores} entries but the cage has {faces} faces")]
    ScoreLengthMismatch { scores: usize, faces: usize },

    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Knobs for [`build_cage`]. `Default` is the configuration used by the
/// experiment harness.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct CageConfig {
    /// Icosphere subdivision level of the initial enclosing sphere.
    pub level: u32,
    /// Radius safety factor (> 1) on top of the cloud's outermost point.
    pub margin: f64,
    /// Neighbourhood size for the curvature estimates behind the scores.
    pub curvature_k: usize,
    /// Weight of the density term in the tetra score.
    pub lambda_density: f64,
    /// Fraction of faces refined by the red–green pass.
    pub subdivide_fraction: f64,
    /// Stage toggle: run the score-and-subdivide pass.
    pub subdivide: bool,
    /// Stage toggle: run vertex optimisation.
    pub optimize: bool,
    pub optimizer: OptimizeConfig,
}

impl Default for CageConfig {
    fn default() -> Self {
        Self {
            level: 1,
            margin: 1.05,
            curvature_k: 16,
            lambda_density: 0.25,
            subdivide_fraction: 0.2,
            subdivide: true,
            optimize: true,
            optimizer: OptimizeConfig::default(),
        }
    }
}

/// Everything produced by [`build_cage`]: the mesh after each enabled
/// stage plus the optimisation trace.
#[derive(Debug, Clone)]
pub struct CageArtifacts {
    pub initial: TriMesh,
    /// Refined mesh, when the subdivision stage ran.
    pub subdivided: Option<TriMesh>,
    /// Face indices refined by the red pass (empty when disabled).
    pub flagged_faces: Vec<usize>,
    /// Optimised mesh, when the optimisation stage ran.
    pub optimized: Option<TriMesh>,
    /// Per-iteration loss trace of the optimisation stage.
    pub log: Vec<LossRecord>,
}

impl CageArtifacts {
    /// The output of the last enabled stage.
    pub fn final_cage(&self) -> &TriMesh {
        self.optimized
            .as_ref()
            .or(self.subdivided.as_ref())
            .unwrap_or(&self.initial)
    }
}

/// Runs the full cage pipeline for a normalised cloud.
///
/// Every stage output is re-validated (closed, manifold, consistently
/// oriented, sphere topology, positive volume) before the next stage runs,
/// so a returned `CageArtifacts` always carries usable cages.
pub fn build_cage(cloud: &PointCloud, config: &CageConfig) -> Result<CageArtifacts, CageError> {
    let initial = init_sphere_cage(cloud, config.level, config.margin)?;
    check_stage(&initial, "initial sphere cage")?;

    let (subdivided, flagged) = if config.subdivide {
        let partition = partition_points(&initial, cloud)?;
        let curvature = estimate_curvature(&cloud.points, config.curvature_k)?;
        let scores = score_tetras(&partition, &curvature, config.lambda_density);
        let (mesh, flagged) = subdivide(&initial, &scores, config.subdivide_fraction)?;
        check_stage(&mesh, "subdivided cage")?;
        (Some(mesh), flagged)
    } else {
        (None, Vec::new())
    };

    let (optimized, log) = if config.optimize {
        let base = subdivided.as_ref().unwrap_or(&initial);
        let outcome = optimize_vertices(base, cloud, &config.optimizer);
        check_stage(&outcome.mesh, "optimized cage")?;
        (Some(outcome.mesh), outcome.log)
    } else {
        (None, Vec::new())
    };

    Ok(CageArtifacts {
        initial,
        subdivided,
        flagged_faces: flagged,
        optimized,
        log,
    })
}

fn check_stage(mesh: &TriMesh, stage: &str) -> Result<(), CageError> {
    let report = mesh.validate();
    if report.is_valid_cage() {
        Ok(())
    } else {
        Err(CageError::InvalidCage {
            details: format!(
                "{stage}: closed={} manifold={} oriented={} euler={} volume={:.6}",
                report.closed,
                report.manifold,
                report.consistently_oriented,
                report.euler_characteristic,
                report.signed_volume
            ),
        })
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use nalgebra::Point3;
    use rand::{RngExt, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn blob_cloud(n: usize, seed: u64) -> PointCloud {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut points = Vec::with_capacity(n);
        for _ in 0..n {
            // Lumpy star-convex blob: unit directions with angular radius
            // modulation, so curvature and density vary over the surface.
            let dir: nalgebra::Vector3<f64> = loop {
                let v = nalgebra::Vector3::new(
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                );
                if v.norm() > 1e-3 && v.norm() <= 1.0 {
                    break v.normalize();
                }
            };
            let bump = 1.0 + 0.25 * (4.0 * dir.x).sin() * (3.0 * dir.y).cos();
            points.push(Point3::from(dir * 0.8 * bump));
        }
        let mut cloud = PointCloud::new(points);
        cloud.normalize().unwrap();
        cloud
    }

    #[test]
    fn full_pipeline_produces_valid_conforming_cage() {
        let cloud = blob_cloud(400, 11);
        let mut config = CageConfig::default();
        config.optimizer.iterations = 120;
        let artifacts = build_cage(&cloud, &config).unwrap();

        assert!(artifacts.initial.validate().is_valid_cage());
        let subdivided = artifacts.subdivided.as_ref().unwrap();
        assert!(subdivided.validate().is_valid_cage());
        assert!(!artifacts.flagged_faces.is_empty());
        assert!(subdivided.face_count() > artifacts.initial.face_count());

        let optimized = artifacts.optimized.as_ref().unwrap();
        assert!(optimized.validate().is_valid_cage());
        assert_eq!(artifacts.log.len(), 120);

        // The optimised cage still strictly contains every point.
        for p in &cloud.points {
            assert!(optimized.contains(p), "point escaped the optimised cage");
        }

        // And it hugs the cloud more tightly than the enclosing sphere.
        let first = &artifacts.log[0];
        let last = artifacts.log.last().unwrap();
        assert!(last.total <= first.total);
    }

    #[test]
    fn ablation_toggles_skip_stages() {
        let cloud = blob_cloud(150, 3);
        let mut config = CageConfig::default();
        config.subdivide = false;
        config.optimize = false;
        let artifacts = build_cage(&cloud, &config).unwrap();
        assert!(artifacts.subdivided.is_none());
        assert!(artifacts.optimized.is_none());
        assert!(artifacts.log.is_empty());
        assert_eq!(
            artifacts.final_cage().face_count(),
            artifacts.initial.face_count()
        );
    }
}
