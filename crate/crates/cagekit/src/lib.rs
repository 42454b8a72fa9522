//! Cage-based deformation toolkit for 3D point clouds.
//!
//! `cagekit` wraps a point cloud in a coarse triangle mesh (the *cage*),
//! binds every point to the cage vertices through mean value coordinates,
//! and then edits the cloud indirectly by moving cage vertices. Because a
//! smooth, low-dimensional handle drives the whole cloud, the resulting
//! edits stay locally rigid and surface-like — which makes the machinery
//! suitable for crafting natural-looking adversarial point clouds against
//! point-set classifiers, and for measuring how natural those clouds are.
//!
//! The crate is organised around that pipeline:
//!
//! * [`geometry`] — point-cloud and triangle-mesh primitives: exact k-NN,
//!   curvature estimation, point/triangle distances, mesh validation,
//!   farthest point sampling.
//! * [`cage`] — cage construction: icosphere initialisation, tetrahedral
//!   scoring, red–green subdivision, and vertex optimisation.
//! * [`mvc`] — mean value coordinates: binding, deformation, and gradient
//!   pull-back from points to cage vertices.
//! * [`net`] — a small point-set classifier with exact analytic gradients,
//!   plus a synthetic eight-class shape dataset and a trainer.
//! * [`attack`] — the cage-deformation attack and a per-point iterative
//!   gradient baseline, sharing misclassification losses.
//! * [`metrics`] — perceptual/naturalness metrics and attack success rate.
//! * [`defense`] — training-free input filters (random sampling, outlier
//!   removal) and post-defense evaluation.
//! * [`io`] — XYZ / PLY / OBJ readers and writers.
//! * [`harness`] — experiment configuration, staged runs, manifests, and
//!   CSV reports; the `cagekit` binary is a thin CLI over this module.

pub mod attack;
pub mod cage;
pub mod defense;
pub mod geometry;
pub mod harness;
pub mod io;
pub mod metrics;
pub mod mvc;
pub mod net;
pub mod opt;

pub use geometry::{PointCloud, TriMesh};

/// Doc-tests for the book chapters: every fenced Rust block in `book/src`
/// compiles and runs against the current API, so the guide cannot drift.
#[cfg(doctest)]
mod book {
    macro_rules! chapter {
        ($name:ident, $path:literal) => {
            #[doc = include_str!($path)]
            mod $name {}
        };
    }

    chapter!(geometry, "../../../book/src/geometry.md");
    chapter!(cage, "../../../book/src/cage.md");
    chapter!(mvc, "../../../book/src/mvc.md");
    chapter!(classifier, "../../../book/src/classifier.md");
    chapter!(attacks, "../../../book/src/attacks.md");
    chapter!(metrics, "../../../book/src/metrics.md");
    chapter!(defenses, "../../../book/src/defenses.md");
    chapter!(formats, "../../../book/src/formats.md");
}
