//! Adversarial engines: cage-space perturbation and the point-wise
//! gradient baseline, plus the shared loss components.
//!
//! Both attacks minimise the same two-part objective — a misclassification
//! loss on the classifier logits plus a weighted imperceptibility distance
//! — but differ in *where* the perturbation lives. The cage attack moves a
//! few dozen cage vertices and lets the coordinate binding spread each
//! vertex shift smoothly over the whole cloud; the baseline moves every
//! point along its own raw gradient, which is what makes its output
//! characteristically noisy. The contrast between the two is the point.

use nalgebra::{Point3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{PointCloud, TriMesh};
use crate::mvc::{MvcCoords, MvcError};
use crate::net::{argmax_lowest, log_softmax, PointClassifier};
use crate::opt::Adam;

#[derive(Debug, Error)]
pub enum AttackError {
    #[error("objective became non-finite at iteration {iteration} (value {value})")]
    NonFiniteLoss { iteration: usize, value: f64 },
    #[error(transparent)]
    Mvc(#[from] MvcError),
}

/// Which misclassification loss drives the attack.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    /// Hinge on the logit gap: `max(z_y - max_{j!=y} z_j, -kappa)`.
    /// Saturates (zero gradient) once the target is beaten by `kappa`.
    Margin,
    /// Negative cross-entropy `log p_y`: minimising it keeps pushing
    /// probability mass away from the true class without saturating.
    Nce,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AttackConfig {
    /// Weight of the imperceptibility (Chamfer) term.
    pub lambda1: f64,
    pub iterations: usize,
    pub step: f64,
    pub loss: LossKind,
    /// Margin slack: the attack only counts as done once the true logit
    /// trails the best rival by at least this much.
    pub kappa: f64,
    /// Recorded into run manifests; the attacks themselves are
    /// deterministic and draw nothing from it.
    pub seed: u64,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self {
            lambda1: 1.0,
            iterations: 200,
            step: 0.01,
            loss: LossKind::Margin,
            kappa: 0.0,
            seed: 0,
        }
    }
}

/// Outcome of one attack run on one cloud.
#[derive(Debug, Clone)]
pub struct AttackResult {
    /// The perturbed cloud, same point count and order as the input.
    pub adversarial: PointCloud,
    /// Verified against a fresh forward pass on `adversarial`.
    pub success: bool,
    /// Optimizer updates performed before stopping.
    pub iterations_used: usize,
    pub final_l_mis: f64,
    /// Chamfer distance actually achieved (the imperceptibility term).
    pub final_d_i: f64,
    /// Cage-vertex offsets; `None` for the point-wise baseline.
    pub cage_offsets: Option<Vec<Vector3<f64>>>,
    /// Per-point displacement `P' - P` against the original cloud.
    pub displacements: Vec<Vector3<f64>>,
}

/// Misclassification loss and its exact logit gradient.
///
/// `Margin` with `kappa = 0` is zero exactly when the cloud is already
/// misclassified; `Nce` equals `log p_y` (so `-ln Z` under uniform logits).
pub fn loss_mis(logits: &[f64], y: usize, kind: LossKind, kappa: f64) -> (f64, Vec<f64>) {
    match kind {
        LossKind::Margin => {
            let rival = best_rival(logits, y);
            let margin = logits[y] - logits[rival];
            if margin > -kappa {
                let mut grad = vec![0.0; logits.len()];
                grad[y] = 1.0;
                grad[rival] = -1.0;
                (margin, grad)
            } else {
                // Saturated: the hinge sits on its constant branch.
                (-kappa, vec![0.0; logits.len()])
            }
        }
        LossKind::Nce => {
            let logp = log_softmax(logits);
            let mut grad: Vec<f64> = logp.iter().map(|l| -l.exp()).collect();
            grad[y] += 1.0;
            (logp[y], grad)
        }
    }
}

/// Index of the strongest logit other than `y`; ties to the lowest index.
fn best_rival(logits: &[f64], y: usize) -> usize {
    let mut best = usize::MAX;
    for (j, z) in logits.iter().enumerate() {
        if j == y {
            continue;
        }
        if best == usize::MAX || *z > logits[best] {
            best = j;
        }
    }
    best
}

/// True once the cloud is misclassified with the required margin.
fn is_success(logits: &[f64], y: usize, kappa: f64) -> bool {
    let rival = best_rival(logits, y);
    argmax_lowest(logits) != y && logits[y] - logits[rival] <= -kappa
}

/// Symmetric Chamfer distance: mean squared nearest-neighbour distance,
/// averaged over both directions.
pub fn chamfer(a: &[Point3<f64>], b: &[Point3<f64>]) -> f64 {
    assert!(!a.is_empty() && !b.is_empty(), "chamfer needs non-empty clouds");
    directed_mean_sq(a, b) + directed_mean_sq(b, a)
}

fn directed_mean_sq(from: &[Point3<f64>], to: &[Point3<f64>]) -> f64 {
    let total: f64 = from
        .iter()
        .map(|p| {
            to.iter()
                .map(|q| (p - q).norm_squared())
                .fold(f64::INFINITY, f64::min)
        })
        .sum();
    total / from.len() as f64
}

/// Chamfer distance plus its gradient with respect to the points of `a`,
/// with nearest-neighbour correspondences frozen at the current positions.
/// Both directions contribute: `a`'s own nearest neighbours directly, and
/// every point of `b` through whichever point of `a` is closest to it.
pub fn chamfer_with_grad(
    a: &[Point3<f64>],
    b: &[Point3<f64>],
) -> (f64, Vec<Vector3<f64>>) {
    assert!(!a.is_empty() && !b.is_empty(), "chamfer needs non-empty clouds");
    let mut grad = vec![Vector3::zeros(); a.len()];
    let mut value = 0.0;

    let inv_a = 1.0 / a.len() as f64;
    for (i, p) in a.iter().enumerate() {
        let mut best = (f64::INFINITY, 0usize);
        for (j, q) in b.iter().enumerate() {
            let d2 = (p - q).norm_squared();
            if d2 < best.0 {
                best = (d2, j);
            }
        }
        value += best.0 * inv_a;
        grad[i] += 2.0 * inv_a * (p - b[best.1]);
    }

    let inv_b = 1.0 / b.len() as f64;
    for q in b {
        let mut best = (f64::INFINITY, 0usize);
        for (i, p) in a.iter().enumerate() {
            let d2 = (q - p).norm_squared();
            if d2 < best.0 {
                best = (d2, i);
            }
        }
        value += best.0 * inv_b;
        grad[best.1] += 2.0 * inv_b * (a[best.1] - q);
    }

    (value, grad)
}

/// Symmetric Hausdorff distance (max of the two directed max-min
/// Euclidean distances).
pub fn hausdorff(a: &[Point3<f64>], b: &[Point3<f64>]) -> f64 {
    assert!(!a.is_empty() && !b.is_empty(), "hausdorff needs non-empty clouds");
    directed_max_min(a, b).max(directed_max_min(b, a))
}

fn directed_max_min(from: &[Point3<f64>], to: &[Point3<f64>]) -> f64 {
    from.iter()
        .map(|p| {
            to.iter()
                .map(|q| (p - q).norm_squared())
                .fold(f64::INFINITY, f64::min)
        })
        .fold(0.0f64, f64::max)
        .sqrt()
}

/// Adversarially perturbs the cloud by moving cage vertices.
///
/// Adaptive-moment descent over the vertex offsets minimises
/// `loss_mis(f(deform(C + dc)), y) + lambda1 * chamfer(deform(C), deform(C + dc))`.
/// Each step deforms, runs the classifier, routes both loss gradients back
/// through the frozen coordinates onto the cage, and updates the offsets.
/// Stops at the first iterate that is misclassified with the configured
/// margin; otherwise returns the final iterate. The success flag is always
/// re-verified with a fresh forward pass on the returned cloud.
pub fn cage_attack(
    model: &PointClassifier,
    cloud: &PointCloud,
    y: usize,
    cage: &TriMesh,
    coords: &MvcCoords,
    config: &AttackConfig,
) -> Result<AttackResult, AttackError> {
    let m = cage.vertices.len();
    let base_points = coords.deform(&cage.vertices)?;
    let mut delta = vec![0.0f64; 3 * m];
    let mut adam = Adam::new(3 * m, config.step);

    let mut moved: Vec<Point3<f64>> = cage.vertices.clone();
    for updates in 0..=config.iterations {
        for (v, (orig, chunk)) in moved
            .iter_mut()
            .zip(cage.vertices.iter().zip(delta.chunks_exact(3)))
        {
            v.x = orig.x + chunk[0];
            v.y = orig.y + chunk[1];
            v.z = orig.z + chunk[2];
        }
        let points = coords.deform(&moved)?;
        let trace = model.forward_trace(&points);
        let (l_mis, dlogits) = loss_mis(&trace.logits, y, config.loss, config.kappa);
        let (d_i, chamfer_grad) = chamfer_with_grad(&points, &base_points);
        let total = l_mis + config.lambda1 * d_i;
        if !total.is_finite() {
            return Err(AttackError::NonFiniteLoss {
                iteration: updates,
                value: total,
            });
        }

        if is_success(&trace.logits, y, config.kappa) || updates == config.iterations {
            let offsets: Vec<Vector3<f64>> = delta
                .chunks_exact(3)
                .map(|c| Vector3::new(c[0], c[1], c[2]))
                .collect();
            return Ok(finish(
                model, cloud, y, points, updates, l_mis, d_i,
                Some(offsets),
            ));
        }

        let mis_grad = model.backward_input(&trace, &dlogits);
        let mut point_grads = vec![Vector3::zeros(); cloud.len()];
        for (g, (gm, gc)) in point_grads
            .iter_mut()
            .zip(mis_grad.iter().zip(&chamfer_grad))
        {
            *g = gm + config.lambda1 * gc;
        }
        let cage_grad = coords.pullback(&point_grads)?;
        let mut grad = vec![0.0f64; 3 * m];
        for (chunk, g) in grad.chunks_exact_mut(3).zip(&cage_grad) {
            chunk[0] = g.x;
            chunk[1] = g.y;
            chunk[2] = g.z;
        }
        adam.update(&mut delta, &grad);
    }
    unreachable!("loop always returns at updates == config.iterations");
}

/// Point-wise iterative gradient baseline.
///
/// Each step moves the whole cloud a fixed distance `step` against the
/// cloud-normalized misclassification gradient (descending the margin:
/// lowering the true logit relative to its best rival). No geometric
/// regularisation whatsoever — the displacement lands wherever the raw
/// gradient points, concentrated on pooling-critical points.
pub fn ifgm_attack(
    model: &PointClassifier,
    cloud: &PointCloud,
    y: usize,
    config: &AttackConfig,
) -> Result<AttackResult, AttackError> {
    let mut points = cloud.points.clone();

    for updates in 0..=config.iterations {
        let trace = model.forward_trace(&points);
        let (l_mis, dlogits) = loss_mis(&trace.logits, y, config.loss, config.kappa);
        if !l_mis.is_finite() {
            return Err(AttackError::NonFiniteLoss {
                iteration: updates,
                value: l_mis,
            });
        }

        let done = is_success(&trace.logits, y, config.kappa) || updates == config.iterations;
        if done {
            let d_i = chamfer(&points, &cloud.points);
            return Ok(finish(model, cloud, y, points, updates, l_mis, d_i, None));
        }

        let grad = model.backward_input(&trace, &dlogits);
        let norm: f64 = grad.iter().map(|g| g.norm_squared()).sum::<f64>().sqrt();
        if norm < 1e-18 {
            // Saturated loss: nothing to follow, leave the cloud as is.
            let d_i = chamfer(&points, &cloud.points);
            return Ok(finish(model, cloud, y, points, updates, l_mis, d_i, None));
        }
        let scale = config.step / norm;
        for (p, g) in points.iter_mut().zip(&grad) {
            p.coords -= scale * g;
        }
    }
    unreachable!("loop always returns at updates == config.iterations");
}

/// Packages a result, re-verifying the success flag on the final cloud.
#[allow(clippy::too_many_arguments)]
fn finish(
    model: &PointClassifier,
    cloud: &PointCloud,
    y: usize,
    points: Vec<Point3<f64>>,
    iterations_used: usize,
    final_l_mis: f64,
    final_d_i: f64,
    cage_offsets: Option<Vec<Vector3<f64>>>,
) -> AttackResult {
    let success = argmax_lowest(&model.forward(&points)) != y;
    let displacements = points
        .iter()
        .zip(&cloud.points)
        .map(|(p, q)| p - q)
        .collect();
    let mut adversarial = PointCloud::new(points);
    adversarial.label = cloud.label;
    AttackResult {
        adversarial,
        success,
        iterations_used,
        final_l_mis,
        final_d_i,
        cage_offsets,
        displacements,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cage::{icosphere, tests::blob_cloud};
    use rand::{RngExt, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn scaled_icosphere(factor: f64) -> TriMesh {
        let mut cage = icosphere(1);
        for v in &mut cage.vertices {
            v.coords *= factor;
        }
        cage
    }

    fn random_cloud(n: usize, extent: f64, seed: u64) -> Vec<Point3<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                Point3::new(
                    rng.random_range(-extent..extent),
                    rng.random_range(-extent..extent),
                    rng.random_range(-extent..extent),
                )
            })
            .collect()
    }

    #[test]
    fn margin_loss_matches_hand_oracle() {
        // Two classes, logits (3, 1), true class 0: gap 2, pushes z_0 down
        // and z_1 up.
        let (v, g) = loss_mis(&[3.0, 1.0], 0, LossKind::Margin, 0.0);
        assert_eq!(v, 2.0);
        assert_eq!(g, vec![1.0, -1.0]);

        // Already misclassified with kappa = 0: hinge clamps at 0.
        let (v, g) = loss_mis(&[-1.0, 4.0, 0.0], 0, LossKind::Margin, 0.0);
        assert_eq!(v, 0.0);
        assert_eq!(g, vec![0.0; 3]);

        // Misclassified but not yet by kappa: still active.
        let (v, g) = loss_mis(&[0.0, 0.1], 0, LossKind::Margin, 0.5);
        assert!((v - -0.1).abs() < 1e-15);
        assert_eq!(g, vec![1.0, -1.0]);

        // Beaten by more than kappa: saturated at -kappa.
        let (v, g) = loss_mis(&[0.0, 0.9], 0, LossKind::Margin, 0.5);
        assert_eq!(v, -0.5);
        assert_eq!(g, vec![0.0, 0.0]);

        // Rival tie resolves to the lowest index.
        let (_, g) = loss_mis(&[5.0, 3.0, 3.0], 0, LossKind::Margin, 0.0);
        assert_eq!(g, vec![1.0, -1.0, 0.0]);
    }

    #[test]
    fn nce_loss_matches_analytic_values() {
        let (v, _) = loss_mis(&[2.0; 8], 3, LossKind::Nce, 0.0);
        assert!((v - -(8.0f64.ln())).abs() < 1e-12);

        // Gradient is onehot minus softmax.
        let logits = [0.5, -1.0, 2.0, 0.0];
        let (_, g) = loss_mis(&logits, 2, LossKind::Nce, 0.0);
        let p = crate::net::softmax(&logits);
        for j in 0..4 {
            let expected = if j == 2 { 1.0 - p[j] } else { -p[j] };
            assert!((g[j] - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn loss_gradients_match_finite_differences() {
        let logits = [0.7, -0.3, 1.2, 0.1, -2.0];
        let h = 1e-6;
        for (kind, kappa) in [(LossKind::Margin, 0.0), (LossKind::Nce, 0.0)] {
            let (_, grad) = loss_mis(&logits, 0, kind, kappa);
            for j in 0..logits.len() {
                let mut plus = logits;
                let mut minus = logits;
                plus[j] += h;
                minus[j] -= h;
                let (lp, _) = loss_mis(&plus, 0, kind, kappa);
                let (lm, _) = loss_mis(&minus, 0, kind, kappa);
                let fd = (lp - lm) / (2.0 * h);
                assert!(
                    (grad[j] - fd).abs() < 1e-6,
                    "{kind:?} logit {j}: {} vs {fd}",
                    grad[j]
                );
            }
        }
    }

    #[test]
    fn chamfer_matches_hand_oracles() {
        let a = vec![Point3::new(0.0, 0.0, 0.0)];
        let b = vec![Point3::new(1.0, 0.0, 0.0)];
        assert_eq!(chamfer(&a, &a), 0.0);
        // Each direction contributes the full squared distance 1.
        assert_eq!(chamfer(&a, &b), 2.0);

        let p = random_cloud(30, 1.0, 4);
        let q = random_cloud(20, 1.0, 5);
        assert!((chamfer(&p, &q) - chamfer(&q, &p)).abs() < 1e-15);
        let (v, _) = chamfer_with_grad(&p, &q);
        assert!((v - chamfer(&p, &q)).abs() < 1e-15);
    }

    #[test]
    fn chamfer_gradient_matches_finite_differences() {
        let a = random_cloud(12, 1.0, 7);
        let b = random_cloud(9, 1.0, 8);
        let (_, grad) = chamfer_with_grad(&a, &b);

        let h = 1e-6;
        let mut num = 0.0f64;
        let mut den = 0.0f64;
        for i in 0..a.len() {
            for axis in 0..3 {
                let mut plus = a.clone();
                let mut minus = a.clone();
                plus[i][axis] += h;
                minus[i][axis] -= h;
                let fd = (chamfer(&plus, &b) - chamfer(&minus, &b)) / (2.0 * h);
                num += (grad[i][axis] - fd).powi(2);
                den += fd * fd;
            }
        }
        assert!(
            num.sqrt() / den.sqrt() < 1e-5,
            "relative error {}",
            num.sqrt() / den.sqrt()
        );
    }

    #[test]
    fn hausdorff_matches_enumeration() {
        let a = vec![Point3::new(0.0, 0.0, 0.0)];
        let b = vec![Point3::new(1.0, 0.0, 0.0), Point3::new(0.0, 0.0, 0.0)];
        assert_eq!(hausdorff(&a, &a), 0.0);
        assert_eq!(hausdorff(&a, &b), 1.0);

        // Hausdorff dominates the root of either Chamfer half-term.
        for seed in 0..5 {
            let p = random_cloud(15, 1.0, seed);
            let q = random_cloud(10, 1.0, seed + 100);
            let h = hausdorff(&p, &q);
            let half_min = directed_mean_sq(&p, &q).min(directed_mean_sq(&q, &p));
            assert!(h >= half_min.sqrt() - 1e-12);
        }
    }

    /// Shared fixture: a small untrained model plus a bound cage/cloud.
    fn attack_fixture() -> (PointClassifier, PointCloud, TriMesh, MvcCoords) {
        let model = PointClassifier::new(4, 3);
        let cloud = blob_cloud(96, 6);
        let cage = scaled_icosphere(1.4);
        let coords = MvcCoords::bind(&cloud, &cage).unwrap();
        (model, cloud, cage, coords)
    }

    #[test]
    fn null_step_returns_input_and_flags_existing_errors() {
        let (model, cloud, cage, coords) = attack_fixture();
        let predicted = model.predict(&cloud.points);
        let config = AttackConfig {
            iterations: 1,
            step: 0.0,
            ..AttackConfig::default()
        };

        // Attacking the predicted class with a zero step cannot succeed.
        let r = cage_attack(&model, &cloud, predicted, &cage, &coords, &config).unwrap();
        assert!(!r.success);
        assert_eq!(r.iterations_used, 1);
        for d in &r.displacements {
            assert!(d.norm() < 1e-5, "reconstruction drift {}", d.norm());
        }

        // Attacking any other label succeeds before the first update.
        let other = (predicted + 1) % model.num_classes();
        let r = cage_attack(&model, &cloud, other, &cage, &coords, &config).unwrap();
        assert!(r.success);
        assert_eq!(r.iterations_used, 0);
    }

    #[test]
    fn cage_attack_succeeds_and_preserves_point_identity() {
        let (model, cloud, cage, coords) = attack_fixture();
        let y = model.predict(&cloud.points);
        let r = cage_attack(&model, &cloud, y, &cage, &coords, &AttackConfig::default()).unwrap();

        assert_eq!(r.adversarial.len(), cloud.len());
        assert!(r.success, "untrained logits should be easy to flip");
        assert!(r.iterations_used <= 200);
        assert!(r.final_d_i.is_finite());
        let offsets = r.cage_offsets.as_ref().unwrap();
        assert_eq!(offsets.len(), cage.vertices.len());

        // Success flag must match a fresh forward pass.
        assert_ne!(model.predict(&r.adversarial.points), y);

        // Row i of the adversarial cloud is row i deformed: displacements
        // are consistent with re-deforming the moved cage.
        let moved: Vec<Point3<f64>> = cage
            .vertices
            .iter()
            .zip(offsets)
            .map(|(v, d)| v + d)
            .collect();
        let redeformed = coords.deform(&moved).unwrap();
        for (p, q) in r.adversarial.points.iter().zip(&redeformed) {
            assert!((p - q).norm() < 1e-12);
        }
    }

    #[test]
    fn ifgm_moves_exactly_step_per_iteration() {
        let (model, cloud, _, _) = attack_fixture();
        let y = model.predict(&cloud.points);
        // A single update, tiny enough that success cannot intervene...
        let config = AttackConfig {
            iterations: 1,
            step: 1e-4,
            kappa: 10.0, // unreachable margin: no early stop
            ..AttackConfig::default()
        };
        let r = ifgm_attack(&model, &cloud, y, &config).unwrap();
        let total: f64 = r
            .displacements
            .iter()
            .map(|d| d.norm_squared())
            .sum::<f64>()
            .sqrt();
        assert!(
            (total - config.step).abs() < 1e-12,
            "step length {total} != {}",
            config.step
        );
    }

    #[test]
    fn ifgm_leaves_cloud_unchanged_when_loss_is_saturated() {
        let (model, cloud, _, _) = attack_fixture();
        // Pick a label the model does NOT predict: margin loss is clamped
        // at zero from the start, so the gradient vanishes everywhere.
        let y = (model.predict(&cloud.points) + 1) % model.num_classes();
        let config = AttackConfig {
            kappa: 0.0,
            ..AttackConfig::default()
        };
        let r = ifgm_attack(&model, &cloud, y, &config).unwrap();
        assert!(r.success);
        assert_eq!(r.iterations_used, 0);
        for d in &r.displacements {
            assert_eq!(d.norm(), 0.0);
        }
    }

    #[test]
    fn ifgm_succeeds_on_untrained_model() {
        let (model, cloud, _, _) = attack_fixture();
        let y = model.predict(&cloud.points);
        let r = ifgm_attack(&model, &cloud, y, &AttackConfig::default()).unwrap();
        assert!(r.success);
        assert_ne!(model.predict(&r.adversarial.points), y);
    }

    #[test]
    fn cage_gradient_path_matches_directional_finite_difference() {
        let model = PointClassifier::with_dims(&[3, 6, 10], &[10, 5, 4], 8);
        let cloud = blob_cloud(20, 3);
        let cage = scaled_icosphere(1.4);
        let coords = MvcCoords::bind(&cloud, &cage).unwrap();
        let lambda1 = 1.0;
        let y = 1;

        // Full objective as a function of the cage offsets.
        let objective = |delta: &[Vector3<f64>]| -> f64 {
            let moved: Vec<Point3<f64>> = cage
                .vertices
                .iter()
                .zip(delta)
                .map(|(v, d)| v + d)
                .collect();
            let base = coords.deform(&cage.vertices).unwrap();
            let points = coords.deform(&moved).unwrap();
            let (lm, _) = loss_mis(&model.forward(&points), y, LossKind::Margin, 0.0);
            lm + lambda1 * chamfer(&points, &base)
        };

        // Analytic gradient along the attack's exact path.
        let mut rng = ChaCha8Rng::seed_from_u64(50);
        let start: Vec<Vector3<f64>> = (0..cage.vertices.len())
            .map(|_| {
                Vector3::new(
                    rng.random_range(-0.01..0.01),
                    rng.random_range(-0.01..0.01),
                    rng.random_range(-0.01..0.01),
                )
            })
            .collect();
        let moved: Vec<Point3<f64>> = cage
            .vertices
            .iter()
            .zip(&start)
            .map(|(v, d)| v + d)
            .collect();
        let base = coords.deform(&cage.vertices).unwrap();
        let points = coords.deform(&moved).unwrap();
        let trace = model.forward_trace(&points);
        let (_, dlogits) = loss_mis(&trace.logits, y, LossKind::Margin, 0.0);
        let mis_grad = model.backward_input(&trace, &dlogits);
        let (_, ch_grad) = chamfer_with_grad(&points, &base);
        let point_grads: Vec<Vector3<f64>> = mis_grad
            .iter()
            .zip(&ch_grad)
            .map(|(m, c)| m + lambda1 * c)
            .collect();
        let cage_grad = coords.pullback(&point_grads).unwrap();

        // Directional derivative along a random cage direction.
        let dir: Vec<Vector3<f64>> = (0..cage.vertices.len())
            .map(|_| {
                Vector3::new(
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                )
            })
            .collect();
        let analytic: f64 = cage_grad.iter().zip(&dir).map(|(g, d)| g.dot(d)).sum();

        let h = 1e-6;
        let shift = |sign: f64| -> Vec<Vector3<f64>> {
            start
                .iter()
                .zip(&dir)
                .map(|(s, d)| s + sign * h * d)
                .collect()
        };
        let fd = (objective(&shift(1.0)) - objective(&shift(-1.0))) / (2.0 * h);

        let rel = (analytic - fd).abs() / fd.abs().max(1e-12);
        assert!(rel < 1e-3, "analytic {analytic} vs fd {fd} (rel {rel})");
    }

    #[test]
    fn huge_lambda_pins_the_cloud_in_place() {
        let (model, cloud, cage, coords) = attack_fixture();
        let y = model.predict(&cloud.points);
        let config = AttackConfig {
            lambda1: 1e6,
            // Small enough that optimizer dithering cannot break through
            // the imperceptibility wall.
            step: 1e-3,
            ..AttackConfig::default()
        };
        let r = cage_attack(&model, &cloud, y, &cage, &coords, &config).unwrap();
        let d = chamfer(&cloud.points, &r.adversarial.points);
        assert!(d <= 1e-4, "chamfer {d}");
    }
}
