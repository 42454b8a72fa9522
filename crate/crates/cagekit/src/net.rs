//! A small point-cloud classifier with exact, hand-written gradients.
//!
//! The architecture is the minimal shared-MLP-plus-pooling design: every
//! point runs through the same two dense+ReLU layers, a feature-wise max
//! pool collapses the point dimension, and a dense head maps the pooled
//! descriptor to class logits. Max pooling makes the network permutation
//! invariant and concentrates input gradients on the few points that win a
//! pooling channel — both properties matter downstream, where attacks
//! differentiate through the whole thing.
//!
//! Everything is `f64` with explicit loops; the model is small enough
//! (~17k parameters) that clarity beats BLAS here.

use std::fs;
use std::path::Path;

use nalgebra::{Point3, Vector3};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::PointCloud;
use crate::opt::Adam;

const MAGIC: &[u8; 6] = b"PCNET1";
/// Hidden widths of the per-point trunk and the pooled head.
const POINT_DIMS: [usize; 3] = [3, 64, 128];
const HEAD_DIMS: [usize; 2] = [128, 64];

#[derive(Debug, Error)]
pub enum NetError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("bad model file: {0}")]
    Format(String),
    #[error("training diverged at epoch {epoch} (loss {loss})")]
    Diverged { epoch: usize, loss: f64 },
    #[error("sample {index} has no label")]
    MissingLabel { index: usize },
    #[error("sample {index} has label {label}, but the model has {classes} classes")]
    LabelOutOfRange {
        index: usize,
        label: usize,
        classes: usize,
    },
    #[error("dataset is empty")]
    EmptyDataset,
}

/// A dense layer `y = W x + b`, weights row-major `rows x cols`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub rows: usize,
    pub cols: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    fn he_init(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Self {
        let scale = (2.0 / cols as f64).sqrt();
        let weights = (0..rows * cols).map(|_| scale * gauss(rng)).collect();
        Self {
            rows,
            cols,
            weights,
            bias: vec![0.0; rows],
        }
    }

    fn forward(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.cols);
        debug_assert_eq!(out.len(), self.rows);
        for r in 0..self.rows {
            let row = &self.weights[r * self.cols..(r + 1) * self.cols];
            let mut acc = self.bias[r];
            for (w, xv) in row.iter().zip(x) {
                acc += w * xv;
            }
            out[r] = acc;
        }
    }

    /// `dx = W^T dy`, accumulated into `dx`.
    fn backward_input(&self, dy: &[f64], dx: &mut [f64]) {
        for r in 0..self.rows {
            let g = dy[r];
            if g == 0.0 {
                continue;
            }
            let row = &self.weights[r * self.cols..(r + 1) * self.cols];
            for (x, w) in dx.iter_mut().zip(row) {
                *x += g * w;
            }
        }
    }
}

/// Standard-normal draw via the Box–Muller transform.
fn gauss(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.random_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    (-2.0 * u1.ln()).sqrt() * u2.cos()
}

fn relu(z: f64) -> f64 {
    if z > 0.0 {
        z
    } else {
        0.0
    }
}

/// Derivative convention: `relu'(0) = 0`.
fn relu_mask(z: f64) -> f64 {
    if z > 0.0 {
        1.0
    } else {
        0.0
    }
}

/// The classifier: shared per-point trunk, max pool, dense head.
#[derive(Debug, Clone, PartialEq)]
pub struct PointClassifier {
    /// `3 -> 64 -> 128`, ReLU after each.
    pub point_layers: Vec<Dense>,
    /// `128 -> 64 -> classes`, ReLU after the first only.
    pub head_layers: Vec<Dense>,
}

/// Intermediate activations kept for the backward passes.
pub struct Trace {
    n_points: usize,
    points: Vec<Point3<f64>>,
    /// Pre-activations of each point layer, layer-major: `z[l][i*dim + c]`.
    point_pre: Vec<Vec<f64>>,
    /// Per channel, the point index that won the max pool.
    argmax: Vec<usize>,
    /// Pre-activations of the head layers.
    head_pre: Vec<Vec<f64>>,
    /// Post-activation inputs consumed by each head layer.
    head_in: Vec<Vec<f64>>,
    pub logits: Vec<f64>,
}

impl PointClassifier {
    /// Fresh He-initialised model with `classes` output logits.
    pub fn new(classes: usize, seed: u64) -> Self {
        let point_dims: Vec<usize> = POINT_DIMS.to_vec();
        let head_dims: Vec<usize> = HEAD_DIMS.iter().copied().chain([classes]).collect();
        Self::with_dims(&point_dims, &head_dims, seed)
    }

    /// Arbitrary layer widths; `point_dims` starts at the input size (3)
    /// and `head_dims` starts at the pooled size (= last point dim).
    pub(crate) fn with_dims(point_dims: &[usize], head_dims: &[usize], seed: u64) -> Self {
        assert!(point_dims.len() >= 2 && head_dims.len() >= 2);
        assert_eq!(
            point_dims.last(),
            head_dims.first(),
            "pool width must match head input"
        );
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let point_layers = point_dims
            .windows(2)
            .map(|w| Dense::he_init(w[1], w[0], &mut rng))
            .collect();
        let head_layers = head_dims
            .windows(2)
            .map(|w| Dense::he_init(w[1], w[0], &mut rng))
            .collect();
        Self {
            point_layers,
            head_layers,
        }
    }

    pub fn num_classes(&self) -> usize {
        self.head_layers.last().unwrap().rows
    }

    fn pool_width(&self) -> usize {
        self.point_layers.last().unwrap().rows
    }

    /// Class logits for a cloud. Panics on an empty input: there is
    /// nothing to pool.
    pub fn forward(&self, points: &[Point3<f64>]) -> Vec<f64> {
        self.forward_trace(points).logits
    }

    /// Forward pass that keeps every intermediate needed for gradients.
    pub fn forward_trace(&self, points: &[Point3<f64>]) -> Trace {
        assert!(!points.is_empty(), "cannot classify an empty cloud");
        let n = points.len();
        let width = self.pool_width();

        let mut point_pre: Vec<Vec<f64>> = self
            .point_layers
            .iter()
            .map(|l| vec![0.0; n * l.rows])
            .collect();
        let mut point_out = vec![0.0; n * width];

        for (i, p) in points.iter().enumerate() {
            let mut input = vec![p.x, p.y, p.z];
            for (l, layer) in self.point_layers.iter().enumerate() {
                let mut out = vec![0.0; layer.rows];
                layer.forward(&input, &mut out);
                point_pre[l][i * layer.rows..(i + 1) * layer.rows].copy_from_slice(&out);
                for v in out.iter_mut() {
                    *v = relu(*v);
                }
                input = out;
            }
            point_out[i * width..(i + 1) * width].copy_from_slice(&input);
        }

        // Feature-wise max pool; ties go to the lowest point index, so the
        // strict `>` comparison is the whole tie rule.
        let mut pooled = vec![f64::NEG_INFINITY; width];
        let mut argmax = vec![0usize; width];
        for i in 0..n {
            for c in 0..width {
                let v = point_out[i * width + c];
                if v > pooled[c] {
                    pooled[c] = v;
                    argmax[c] = i;
                }
            }
        }

        let mut head_pre = Vec::with_capacity(self.head_layers.len());
        let mut head_in = Vec::with_capacity(self.head_layers.len());
        let mut h = pooled.clone();
        let last = self.head_layers.len() - 1;
        for (l, layer) in self.head_layers.iter().enumerate() {
            head_in.push(h.clone());
            let mut out = vec![0.0; layer.rows];
            layer.forward(&h, &mut out);
            head_pre.push(out.clone());
            if l < last {
                for v in out.iter_mut() {
                    *v = relu(*v);
                }
            }
            h = out;
        }

        Trace {
            n_points: n,
            points: points.to_vec(),
            point_pre,
            argmax,
            head_pre,
            head_in,
            logits: h,
        }
    }

    pub fn predict(&self, points: &[Point3<f64>]) -> usize {
        argmax_lowest(&self.forward(points))
    }

    /// Gradient of a scalar loss with respect to every input point, given
    /// `dlogits = dL/dlogits`. Only points that win at least one pooling
    /// channel receive a non-zero gradient.
    pub fn backward_input(&self, trace: &Trace, dlogits: &[f64]) -> Vec<Vector3<f64>> {
        let dpooled = self.head_backward_to_pool(trace, dlogits);
        let width = self.pool_width();

        let mut grads = vec![Vector3::zeros(); trace.n_points];
        // Group the pooled gradient by winning point so each contributing
        // point is back-propagated once.
        let mut per_point: Vec<Vec<(usize, f64)>> = vec![Vec::new(); trace.n_points];
        for c in 0..width {
            if dpooled[c] != 0.0 {
                per_point[trace.argmax[c]].push((c, dpooled[c]));
            }
        }

        for (i, channels) in per_point.iter().enumerate() {
            if channels.is_empty() {
                continue;
            }
            let mut dy = vec![0.0; width];
            for &(c, g) in channels {
                dy[c] = g;
            }
            // Walk the point trunk backwards.
            for (l, layer) in self.point_layers.iter().enumerate().rev() {
                let pre = &trace.point_pre[l][i * layer.rows..(i + 1) * layer.rows];
                for (d, z) in dy.iter_mut().zip(pre) {
                    *d *= relu_mask(*z);
                }
                let mut dx = vec![0.0; layer.cols];
                layer.backward_input(&dy, &mut dx);
                dy = dx;
            }
            grads[i] = Vector3::new(dy[0], dy[1], dy[2]);
        }
        grads
    }

    /// Accumulates parameter gradients (`dL/dW`, `dL/db`) into `grads`,
    /// which must come from [`ParamGrads::zeros_like`].
    pub fn backward_params(&self, trace: &Trace, dlogits: &[f64], grads: &mut ParamGrads) {
        // Head layers.
        let last = self.head_layers.len() - 1;
        let mut dy = dlogits.to_vec();
        for (l, layer) in self.head_layers.iter().enumerate().rev() {
            if l < last {
                for (d, z) in dy.iter_mut().zip(&trace.head_pre[l]) {
                    *d *= relu_mask(*z);
                }
            }
            let x = &trace.head_in[l];
            let gw = &mut grads.head[l].0;
            for r in 0..layer.rows {
                let g = dy[r];
                if g == 0.0 {
                    continue;
                }
                let row = &mut gw[r * layer.cols..(r + 1) * layer.cols];
                for (acc, xv) in row.iter_mut().zip(x) {
                    *acc += g * xv;
                }
            }
            for (acc, g) in grads.head[l].1.iter_mut().zip(&dy) {
                *acc += g;
            }
            let mut dx = vec![0.0; layer.cols];
            layer.backward_input(&dy, &mut dx);
            dy = dx;
        }
        let dpooled = dy;

        // Point trunk: only pool winners contribute.
        let width = self.pool_width();
        let mut per_point: Vec<Vec<(usize, f64)>> = vec![Vec::new(); trace.n_points];
        for c in 0..width {
            if dpooled[c] != 0.0 {
                per_point[trace.argmax[c]].push((c, dpooled[c]));
            }
        }

        for (i, channels) in per_point.iter().enumerate() {
            if channels.is_empty() {
                continue;
            }
            let mut dy = vec![0.0; width];
            for &(c, g) in channels {
                dy[c] = g;
            }
            for (l, layer) in self.point_layers.iter().enumerate().rev() {
                let pre = &trace.point_pre[l][i * layer.rows..(i + 1) * layer.rows];
                for (d, z) in dy.iter_mut().zip(pre) {
                    *d *= relu_mask(*z);
                }
                // Input that fed this layer: previous layer's activation,
                // or the raw point for layer 0.
                let point = [trace.points[i].x, trace.points[i].y, trace.points[i].z];
                let x: &[f64] = if l == 0 {
                    &point
                } else {
                    &trace.point_pre[l - 1][i * layer.cols..(i + 1) * layer.cols]
                };
                let gw = &mut grads.point[l].0;
                for r in 0..layer.rows {
                    let g = dy[r];
                    if g == 0.0 {
                        continue;
                    }
                    let row = &mut gw[r * layer.cols..(r + 1) * layer.cols];
                    if l == 0 {
                        for (acc, xv) in row.iter_mut().zip(x) {
                            *acc += g * xv;
                        }
                    } else {
                        for (acc, zv) in row.iter_mut().zip(x) {
                            *acc += g * relu(*zv);
                        }
                    }
                }
                for (acc, g) in grads.point[l].1.iter_mut().zip(&dy) {
                    *acc += g;
                }
                let mut dx = vec![0.0; layer.cols];
                layer.backward_input(&dy, &mut dx);
                dy = dx;
            }
        }
    }

    fn head_backward_to_pool(&self, trace: &Trace, dlogits: &[f64]) -> Vec<f64> {
        let last = self.head_layers.len() - 1;
        let mut dy = dlogits.to_vec();
        for (l, layer) in self.head_layers.iter().enumerate().rev() {
            if l < last {
                for (d, z) in dy.iter_mut().zip(&trace.head_pre[l]) {
                    *d *= relu_mask(*z);
                }
            }
            let mut dx = vec![0.0; layer.cols];
            layer.backward_input(&dy, &mut dx);
            dy = dx;
        }
        dy
    }

    fn all_layers(&self) -> impl Iterator<Item = &Dense> {
        self.point_layers.iter().chain(self.head_layers.iter())
    }

    pub fn param_count(&self) -> usize {
        self.all_layers()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    /// Flattens all parameters, layer by layer, weights then bias.
    pub fn params_to_vec(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in self.all_layers() {
            out.extend_from_slice(&l.weights);
            out.extend_from_slice(&l.bias);
        }
        out
    }

    pub fn set_params(&mut self, params: &[f64]) {
        assert_eq!(params.len(), self.param_count());
        let mut at = 0;
        for l in self
            .point_layers
            .iter_mut()
            .chain(self.head_layers.iter_mut())
        {
            let (wl, bl) = (l.weights.len(), l.bias.len());
            l.weights.copy_from_slice(&params[at..at + wl]);
            at += wl;
            l.bias.copy_from_slice(&params[at..at + bl]);
            at += bl;
        }
    }

    /// Writes the model: `PCNET1` magic, `u32` layer count, then per layer
    /// `u32 rows, u32 cols, rows*cols f64 weights (row-major), u32 bias
    /// length, bias f64` — everything little-endian.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), NetError> {
        let mut buf = Vec::new();
        buf.extend_from_slice(MAGIC);
        let layers: Vec<&Dense> = self.all_layers().collect();
        buf.extend_from_slice(&(layers.len() as u32).to_le_bytes());
        for l in layers {
            buf.extend_from_slice(&(l.rows as u32).to_le_bytes());
            buf.extend_from_slice(&(l.cols as u32).to_le_bytes());
            for w in &l.weights {
                buf.extend_from_slice(&w.to_le_bytes());
            }
            buf.extend_from_slice(&(l.bias.len() as u32).to_le_bytes());
            for b in &l.bias {
                buf.extend_from_slice(&b.to_le_bytes());
            }
        }
        Ok(fs::write(path, buf)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, NetError> {
        let bytes = fs::read(path)?;
        let mut at = 0usize;
        let take = |at: &mut usize, n: usize| -> Result<&[u8], NetError> {
            if *at + n > bytes.len() {
                return Err(NetError::Format("file truncated".into()));
            }
            let s = &bytes[*at..*at + n];
            *at += n;
            Ok(s)
        };

        if take(&mut at, 6)? != MAGIC {
            return Err(NetError::Format("bad magic".into()));
        }
        let read_u32 = |at: &mut usize| -> Result<u32, NetError> {
            Ok(u32::from_le_bytes(take(at, 4)?.try_into().unwrap()))
        };
        let count = read_u32(&mut at)? as usize;
        if count != 4 {
            return Err(NetError::Format(format!(
                "expected 4 layers, file has {count}"
            )));
        }

        let mut layers = Vec::with_capacity(count);
        for _ in 0..count {
            let rows = read_u32(&mut at)? as usize;
            let cols = read_u32(&mut at)? as usize;
            let n = rows
                .checked_mul(cols)
                .ok_or_else(|| NetError::Format("layer size overflow".into()))?;
            let mut weights = Vec::with_capacity(n);
            for chunk in take(&mut at, n * 8)?.chunks_exact(8) {
                weights.push(f64::from_le_bytes(chunk.try_into().unwrap()));
            }
            let blen = read_u32(&mut at)? as usize;
            if blen != rows {
                return Err(NetError::Format(format!(
                    "bias length {blen} does not match layer rows {rows}"
                )));
            }
            let mut bias = Vec::with_capacity(blen);
            for chunk in take(&mut at, blen * 8)?.chunks_exact(8) {
                bias.push(f64::from_le_bytes(chunk.try_into().unwrap()));
            }
            layers.push(Dense {
                rows,
                cols,
                weights,
                bias,
            });
        }
        if at != bytes.len() {
            return Err(NetError::Format(format!(
                "{} trailing bytes",
                bytes.len() - at
            )));
        }
        for pair in layers.windows(2) {
            if pair[1].cols != pair[0].rows {
                return Err(NetError::Format(format!(
                    "layer chain mismatch: {} outputs feed {} inputs",
                    pair[0].rows, pair[1].cols
                )));
            }
        }
        if layers[0].cols != 3 {
            return Err(NetError::Format(format!(
                "first layer must take 3 inputs, takes {}",
                layers[0].cols
            )));
        }
        let head = layers.split_off(2);
        Ok(Self {
            point_layers: layers,
            head_layers: head,
        })
    }
}

/// Parameter gradients, mirroring the model's layer structure as
/// `(weights, bias)` pairs.
pub struct ParamGrads {
    point: Vec<(Vec<f64>, Vec<f64>)>,
    head: Vec<(Vec<f64>, Vec<f64>)>,
}

impl ParamGrads {
    pub fn zeros_like(model: &PointClassifier) -> Self {
        let zero = |l: &Dense| (vec![0.0; l.weights.len()], vec![0.0; l.bias.len()]);
        Self {
            point: model.point_layers.iter().map(zero).collect(),
            head: model.head_layers.iter().map(zero).collect(),
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for (w, b) in self.point.iter_mut().chain(self.head.iter_mut()) {
            for v in w.iter_mut().chain(b.iter_mut()) {
                *v *= factor;
            }
        }
    }

    /// Flattens in the same order as [`PointClassifier::params_to_vec`].
    pub fn to_vec(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in self.point.iter().chain(self.head.iter()) {
            out.extend_from_slice(w);
            out.extend_from_slice(b);
        }
        out
    }
}

/// Numerically stable log-softmax.
pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln() + max;
    logits.iter().map(|z| z - lse).collect()
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    log_softmax(logits).iter().map(|l| l.exp()).collect()
}

/// Index of the largest logit; ties resolve to the lowest index.
pub fn argmax_lowest(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Mean cross-entropy loss and its logit gradient for one sample.
pub fn cross_entropy(logits: &[f64], label: usize) -> (f64, Vec<f64>) {
    let logp = log_softmax(logits);
    let loss = -logp[label];
    let mut dlogits: Vec<f64> = logp.iter().map(|l| l.exp()).collect();
    dlogits[label] -= 1.0;
    (loss, dlogits)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Initial Adam step size; halved halfway through the epochs and
    /// again at the three-quarter mark.
    pub step: f64,
    pub seed: u64,
    /// Fraction of each class routed to the training split (see
    /// [`split_indices`]); `train` itself consumes pre-split data.
    pub split_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 36,
            batch_size: 32,
            step: 1e-3,
            seed: 7,
            split_fraction: 0.8,
        }
    }
}

/// Per-epoch training trace, serialisable for run manifests. The test
/// column stays empty when no held-out set is supplied.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epoch_loss: Vec<f64>,
    pub epoch_train_accuracy: Vec<f64>,
    pub epoch_test_accuracy: Vec<f64>,
}

/// Trains `model` in place with Adam on mean cross-entropy, evaluating on
/// `test_data` (may be empty) after every epoch.
///
/// Sample order is reshuffled each epoch with a deterministic generator
/// derived from the config seed, so equal seeds give bitwise-equal models.
/// A non-finite epoch loss aborts with [`NetError::Diverged`].
pub fn train(
    model: &mut PointClassifier,
    data: &[PointCloud],
    test_data: &[PointCloud],
    config: &TrainConfig,
) -> Result<TrainReport, NetError> {
    if data.is_empty() {
        return Err(NetError::EmptyDataset);
    }
    let classes = model.num_classes();
    for (index, sample) in data.iter().enumerate() {
        let label = sample.label.ok_or(NetError::MissingLabel { index })?;
        if label >= classes {
            return Err(NetError::LabelOutOfRange {
                index,
                label,
                classes,
            });
        }
    }

    let mut adam = Adam::new(model.param_count(), config.step);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut report = TrainReport {
        epoch_loss: Vec::with_capacity(config.epochs),
        epoch_train_accuracy: Vec::with_capacity(config.epochs),
        epoch_test_accuracy: Vec::with_capacity(config.epochs),
    };

    for epoch in 0..config.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(epoch as u64));
        shuffle(&mut order, &mut rng);

        // Two-milestone schedule: full step for the first half, halved
        // until three quarters, quartered for the home stretch. Keeps the
        // late epochs from bouncing around the optimum.
        adam.step = if 4 * epoch >= 3 * config.epochs {
            config.step * 0.25
        } else if 2 * epoch >= config.epochs {
            config.step * 0.5
        } else {
            config.step
        };

        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for batch in order.chunks(config.batch_size) {
            let mut grads = ParamGrads::zeros_like(model);
            for &idx in batch {
                let sample = &data[idx];
                let label = sample.label.unwrap();
                let trace = model.forward_trace(&sample.points);
                let (loss, dlogits) = cross_entropy(&trace.logits, label);
                loss_sum += loss;
                if argmax_lowest(&trace.logits) == label {
                    correct += 1;
                }
                model.backward_params(&trace, &dlogits, &mut grads);
            }
            grads.scale(1.0 / batch.len() as f64);

            let mut params = model.params_to_vec();
            adam.update(&mut params, &grads.to_vec());
            model.set_params(&params);
        }

        let mean_loss = loss_sum / data.len() as f64;
        if !mean_loss.is_finite() {
            return Err(NetError::Diverged {
                epoch,
                loss: mean_loss,
            });
        }
        report.epoch_loss.push(mean_loss);
        report
            .epoch_train_accuracy
            .push(correct as f64 / data.len() as f64);
        if !test_data.is_empty() {
            report.epoch_test_accuracy.push(accuracy(model, test_data));
        }
    }
    Ok(report)
}

/// Fraction of samples whose argmax logit matches their label.
pub fn accuracy(model: &PointClassifier, data: &[PointCloud]) -> f64 {
    if data.is_empty() {
        return 0.0;
    }
    let correct = data
        .iter()
        .filter(|s| s.label == Some(model.predict(&s.points)))
        .count();
    correct as f64 / data.len() as f64
}

/// In-place Fisher–Yates shuffle.
fn shuffle(order: &mut [usize], rng: &mut ChaCha8Rng) {
    for i in (1..order.len()).rev() {
        let j = rng.random_range(0..=i);
        order.swap(i, j);
    }
}

// ---------------------------------------------------------------------------
// Synthetic dataset
// ---------------------------------------------------------------------------

/// Names of the analytic shape classes, index = label.
pub const CLASS_NAMES: [&str; 8] = [
    "sphere", "cube", "cylinder", "cone", "torus", "pyramid", "cross", "capsule",
];

/// Generates `per_class` clouds of each shape class, `points` points each.
///
/// Every cloud is sampled area-uniformly from an analytic surface, jittered
/// with Gaussian noise (sigma 0.01), randomly rotated, then normalised to
/// zero centroid and unit max norm. Generation is sequential from a single
/// seeded generator, so output is a pure function of the arguments.
pub fn synth_dataset(per_class: usize, points: usize, seed: u64) -> Vec<PointCloud> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(8 * per_class);
    for class in 0..8 {
        for _ in 0..per_class {
            out.push(synth_cloud(class, points, &mut rng));
        }
    }
    out
}

fn synth_cloud(class: usize, points: usize, rng: &mut ChaCha8Rng) -> PointCloud {
    let rot = random_rotation(rng);
    let mut pts = Vec::with_capacity(points);
    for _ in 0..points {
        let p = shape_point(class, rng);
        let jittered = Vector3::new(
            p.x + 0.01 * gauss(rng),
            p.y + 0.01 * gauss(rng),
            p.z + 0.01 * gauss(rng),
        );
        pts.push(Point3::from(rot * jittered));
    }
    let mut cloud = PointCloud::with_label(pts, class);
    cloud
        .normalize()
        .expect("synthetic shapes are never degenerate");
    cloud
}

fn random_rotation(rng: &mut ChaCha8Rng) -> nalgebra::Rotation3<f64> {
    // A 4D Gaussian normalised to the unit sphere is a uniform quaternion.
    loop {
        let q = nalgebra::Quaternion::new(gauss(rng), gauss(rng), gauss(rng), gauss(rng));
        if q.norm() > 1e-9 {
            return nalgebra::UnitQuaternion::from_quaternion(q).to_rotation_matrix();
        }
    }
}

fn unit_dir(rng: &mut ChaCha8Rng) -> Vector3<f64> {
    loop {
        let v = Vector3::new(gauss(rng), gauss(rng), gauss(rng));
        if v.norm() > 1e-9 {
            return v.normalize();
        }
    }
}

/// One area-uniform sample from the surface of shape `class`.
fn shape_point(class: usize, rng: &mut ChaCha8Rng) -> Point3<f64> {
    match class {
        // Sphere, radius 1.
        0 => Point3::from(unit_dir(rng)),
        // Cube surface, side 2.
        1 => {
            let face = rng.random_range(0..6u32);
            let a = rng.random_range(-1.0..1.0);
            let b = rng.random_range(-1.0..1.0);
            let s = if face % 2 == 0 { 1.0 } else { -1.0 };
            match face / 2 {
                0 => Point3::new(s, a, b),
                1 => Point3::new(a, s, b),
                _ => Point3::new(a, b, s),
            }
        }
        // Cylinder: radius 0.7, z in [-1, 1], capped.
        2 => {
            let r = 0.7;
            let lateral = 2.0 * std::f64::consts::TAU * r; // height 2
            let caps = std::f64::consts::TAU * r * r; // two disks
            if rng.random_range(0.0..lateral + caps) < lateral {
                let t = rng.random_range(0.0..std::f64::consts::TAU);
                Point3::new(r * t.cos(), r * t.sin(), rng.random_range(-1.0..1.0))
            } else {
                let t = rng.random_range(0.0..std::f64::consts::TAU);
                let rr = r * rng.random_range(0.0f64..1.0).sqrt();
                let z = if rng.random_range(0..2u32) == 0 { 1.0 } else { -1.0 };
                Point3::new(rr * t.cos(), rr * t.sin(), z)
            }
        }
        // Cone: apex (0,0,1), base radius 0.9 at z = -1, with base disk.
        3 => {
            let r: f64 = 0.9;
            let slant = (4.0 + r * r).sqrt();
            let lateral = std::f64::consts::PI * r * slant;
            let base = std::f64::consts::PI * r * r;
            let t = rng.random_range(0.0..std::f64::consts::TAU);
            if rng.random_range(0.0..lateral + base) < lateral {
                let f = rng.random_range(0.0f64..1.0).sqrt();
                Point3::new(f * r * t.cos(), f * r * t.sin(), 1.0 - 2.0 * f)
            } else {
                let rr = r * rng.random_range(0.0f64..1.0).sqrt();
                Point3::new(rr * t.cos(), rr * t.sin(), -1.0)
            }
        }
        // Torus: major 0.7, minor 0.3, rejection-sampled for area.
        4 => {
            let (big, small) = (0.7, 0.3);
            loop {
                let u = rng.random_range(0.0..std::f64::consts::TAU);
                let v = rng.random_range(0.0..std::f64::consts::TAU);
                let accept = (1.0 + (small / big) * v.cos()) / (1.0 + small / big);
                if rng.random_range(0.0..1.0) < accept {
                    let ring = big + small * v.cos();
                    return Point3::new(ring * u.cos(), ring * u.sin(), small * v.sin());
                }
            }
        }
        // Square pyramid: base side 1.4 at z = -0.7, apex (0,0,0.7).
        5 => {
            let half: f64 = 0.7;
            let apex = Point3::new(0.0, 0.0, half);
            let corners = [
                Point3::new(half, half, -half),
                Point3::new(-half, half, -half),
                Point3::new(-half, -half, -half),
                Point3::new(half, -half, -half),
            ];
            let edge = 2.0 * half;
            let slant_h = (half * half + edge * edge).sqrt();
            let tri_area = 0.5 * edge * slant_h;
            let base_area = edge * edge;
            if rng.random_range(0.0..4.0 * tri_area + base_area) < base_area {
                Point3::new(
                    rng.random_range(-half..half),
                    rng.random_range(-half..half),
                    -half,
                )
            } else {
                let k = rng.random_range(0..4usize);
                let (a, b, c) = (corners[k], corners[(k + 1) % 4], apex);
                let su = rng.random_range(0.0f64..1.0).sqrt();
                let v = rng.random_range(0.0..1.0);
                Point3::from(
                    (1.0 - su) * a.coords + su * (1.0 - v) * b.coords + su * v * c.coords,
                )
            }
        }
        // Two unit squares crossing at a right angle.
        6 => {
            let a = rng.random_range(-1.0..1.0);
            let b = rng.random_range(-1.0..1.0);
            if rng.random_range(0..2u32) == 0 {
                Point3::new(a, b, 0.0)
            } else {
                Point3::new(a, 0.0, b)
            }
        }
        // Capsule: cylinder radius 0.5, z in [-0.5, 0.5], hemisphere ends.
        7 => {
            let r = 0.5;
            let lateral = std::f64::consts::TAU * r; // height 1
            let spheres = 2.0 * std::f64::consts::TAU * r * r;
            if rng.random_range(0.0..lateral + spheres) < lateral {
                let t = rng.random_range(0.0..std::f64::consts::TAU);
                Point3::new(r * t.cos(), r * t.sin(), rng.random_range(-0.5..0.5))
            } else {
                let d = unit_dir(rng);
                let z = 0.5f64.copysign(d.z);
                Point3::new(r * d.x, r * d.y, r * d.z + z)
            }
        }
        _ => unreachable!("class {class} out of range"),
    }
}

/// Splits sample indices class-by-class: the first `train_fraction` of each
/// class's shuffled indices train, the rest test. Deterministic in `seed`.
pub fn split_indices(
    data: &[PointCloud],
    train_fraction: f64,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>), NetError> {
    if data.is_empty() {
        return Err(NetError::EmptyDataset);
    }
    let mut by_class: Vec<(usize, Vec<usize>)> = Vec::new();
    for (index, sample) in data.iter().enumerate() {
        let label = sample.label.ok_or(NetError::MissingLabel { index })?;
        match by_class.iter_mut().find(|(c, _)| *c == label) {
            Some((_, v)) => v.push(index),
            None => by_class.push((label, vec![index])),
        }
    }
    by_class.sort_by_key(|(c, _)| *c);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (_, mut indices) in by_class {
        shuffle(&mut indices, &mut rng);
        let cut = (indices.len() as f64 * train_fraction).floor() as usize;
        train.extend_from_slice(&indices[..cut]);
        test.extend_from_slice(&indices[cut..]);
    }
    Ok((train, test))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn tiny_model(seed: u64) -> PointClassifier {
        PointClassifier::with_dims(&[3, 5, 7], &[7, 6, 4], seed)
    }

    fn tiny_cloud(seed: u64, n: usize) -> Vec<Point3<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                Point3::new(
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                )
            })
            .collect()
    }

    #[test]
    fn forward_is_permutation_invariant() {
        let model = PointClassifier::new(8, 3);
        let points = tiny_cloud(1, 50);
        let logits = model.forward(&points);

        let mut permuted = points.clone();
        permuted.reverse();
        permuted.swap(3, 17);
        let logits2 = model.forward(&permuted);

        // Per-point features are computed independently and max pooling is
        // order-free, so the logits agree exactly, not just approximately.
        assert_eq!(logits, logits2);
    }

    #[test]
    fn input_gradient_matches_central_differences() {
        let model = tiny_model(11);
        let points = tiny_cloud(2, 6);
        let label = 1;

        let trace = model.forward_trace(&points);
        let (_, dlogits) = cross_entropy(&trace.logits, label);
        let grad = model.backward_input(&trace, &dlogits);

        let h = 1e-6;
        let mut num = 0.0f64;
        let mut den = 0.0f64;
        for i in 0..points.len() {
            for axis in 0..3 {
                let mut plus = points.clone();
                let mut minus = points.clone();
                plus[i][axis] += h;
                minus[i][axis] -= h;
                let (lp, _) = cross_entropy(&model.forward(&plus), label);
                let (lm, _) = cross_entropy(&model.forward(&minus), label);
                let fd = (lp - lm) / (2.0 * h);
                num += (grad[i][axis] - fd).powi(2);
                den += fd * fd;
            }
        }
        assert!(
            (num.sqrt() / den.sqrt().max(1e-12)) < 1e-4,
            "relative error {}",
            num.sqrt() / den.sqrt()
        );
    }

    #[test]
    fn parameter_gradient_matches_central_differences() {
        let mut model = tiny_model(5);
        let points = tiny_cloud(4, 6);
        let label = 2;

        let trace = model.forward_trace(&points);
        let (_, dlogits) = cross_entropy(&trace.logits, label);
        let mut grads = ParamGrads::zeros_like(&model);
        model.backward_params(&trace, &dlogits, &mut grads);
        let analytic = grads.to_vec();

        let h = 1e-6;
        let base = model.params_to_vec();
        let mut num = 0.0f64;
        let mut den = 0.0f64;
        for k in 0..base.len() {
            let mut params = base.clone();
            params[k] += h;
            model.set_params(&params);
            let (lp, _) = cross_entropy(&model.forward(&points), label);
            params[k] -= 2.0 * h;
            model.set_params(&params);
            let (lm, _) = cross_entropy(&model.forward(&points), label);
            let fd = (lp - lm) / (2.0 * h);
            num += (analytic[k] - fd).powi(2);
            den += fd * fd;
        }
        model.set_params(&base);
        assert!(
            (num.sqrt() / den.sqrt().max(1e-12)) < 1e-4,
            "relative error {}",
            num.sqrt() / den.sqrt()
        );
    }

    #[test]
    fn pool_ties_route_gradient_to_lowest_index() {
        let model = PointClassifier::new(4, 9);
        let mut points = tiny_cloud(8, 5);
        points[1] = points[0]; // exact duplicate: every channel ties

        let trace = model.forward_trace(&points);
        let (_, dlogits) = cross_entropy(&trace.logits, 0);
        let grad = model.backward_input(&trace, &dlogits);

        assert!(grad[0].norm() > 0.0, "winner got no gradient");
        assert_eq!(grad[1], Vector3::zeros(), "loser of the tie got gradient");
    }

    #[test]
    fn softmax_helpers_agree() {
        let logits = vec![0.3, -2.0, 1.7, 0.0];
        let p = softmax(&logits);
        assert_relative_eq!(p.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
        let lp = log_softmax(&logits);
        for (a, b) in p.iter().zip(&lp) {
            assert_relative_eq!(a.ln(), *b, epsilon = 1e-12);
        }
        // Uniform logits give each class probability 1/n.
        let u = softmax(&[5.0; 8]);
        for v in u {
            assert_relative_eq!(v, 0.125, epsilon = 1e-12);
        }
    }

    #[test]
    fn model_file_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.pcnet");
        let model = PointClassifier::new(8, 42);
        model.save(&path).unwrap();
        let back = PointClassifier::load(&path).unwrap();
        assert_eq!(model, back);

        let points = tiny_cloud(3, 20);
        assert_eq!(model.forward(&points), back.forward(&points));
    }

    #[test]
    fn corrupt_model_files_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.pcnet");
        let model = PointClassifier::new(8, 1);
        model.save(&path).unwrap();

        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(
            PointClassifier::load(&path),
            Err(NetError::Format(_))
        ));

        let mut bad_magic = bytes.clone();
        bad_magic[0] = b'X';
        fs::write(&path, &bad_magic).unwrap();
        assert!(matches!(
            PointClassifier::load(&path),
            Err(NetError::Format(_))
        ));

        let mut trailing = bytes;
        trailing.push(0);
        fs::write(&path, &trailing).unwrap();
        assert!(matches!(
            PointClassifier::load(&path),
            Err(NetError::Format(_))
        ));
    }

    #[test]
    fn dataset_is_deterministic_and_normalised() {
        let a = synth_dataset(2, 64, 77);
        let b = synth_dataset(2, 64, 77);
        assert_eq!(a.len(), 16);
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.points, y.points);
            assert_eq!(x.label, y.label);
        }
        for cloud in &a {
            assert_eq!(cloud.len(), 64);
            assert!(cloud.centroid().unwrap().coords.norm() < 1e-9);
            assert_relative_eq!(cloud.max_norm(), 1.0, epsilon = 1e-9);
        }
        let c = synth_dataset(2, 64, 78);
        assert_ne!(a[0].points, c[0].points);
    }

    #[test]
    fn split_is_per_class_and_deterministic() {
        let data = synth_dataset(10, 16, 5);
        let (train, test) = split_indices(&data, 0.8, 3).unwrap();
        assert_eq!(train.len(), 64);
        assert_eq!(test.len(), 16);
        // Each class contributes exactly 8 train / 2 test samples.
        for class in 0..8 {
            let n_train = train.iter().filter(|&&i| data[i].label == Some(class)).count();
            let n_test = test.iter().filter(|&&i| data[i].label == Some(class)).count();
            assert_eq!((n_train, n_test), (8, 2), "class {class}");
        }
        let (train2, test2) = split_indices(&data, 0.8, 3).unwrap();
        assert_eq!(train, train2);
        assert_eq!(test, test2);
        // No overlap, full coverage.
        let mut all: Vec<usize> = train.iter().chain(&test).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..80).collect::<Vec<_>>());
    }

    #[test]
    fn training_reduces_loss_and_learns_tiny_dataset() {
        let data = synth_dataset(4, 128, 21);
        let mut model = PointClassifier::new(8, 13);
        let config = TrainConfig {
            epochs: 40,
            batch_size: 8,
            step: 3e-3,
            seed: 99,
            ..TrainConfig::default()
        };
        let report = train(&mut model, &data, &[], &config).unwrap();
        assert_eq!(report.epoch_loss.len(), 40);
        let first = report.epoch_loss[0];
        let last = *report.epoch_loss.last().unwrap();
        assert!(last < 0.5 * first, "loss {first} -> {last}");
        assert!(
            *report.epoch_train_accuracy.last().unwrap() > 0.5,
            "train accuracy {}",
            report.epoch_train_accuracy.last().unwrap()
        );
        assert!(report.epoch_test_accuracy.is_empty());
    }

    #[test]
    fn training_rejects_bad_labels() {
        let mut data = synth_dataset(1, 16, 2);
        let mut model = PointClassifier::new(8, 3);
        data[0].label = None;
        assert!(matches!(
            train(&mut model, &data, &[], &TrainConfig::default()),
            Err(NetError::MissingLabel { index: 0 })
        ));
        data[0].label = Some(12);
        assert!(matches!(
            train(&mut model, &data, &[], &TrainConfig::default()),
            Err(NetError::LabelOutOfRange { label: 12, .. })
        ));
    }

    #[test]
    fn two_class_toy_reaches_high_accuracy_fast() {
        // Spheres vs cubes are linearly separable in descriptor space;
        // a handful of epochs must essentially solve them.
        let data: Vec<PointCloud> = synth_dataset(100, 512, 31)
            .into_iter()
            .filter(|c| c.label == Some(0) || c.label == Some(1))
            .collect();
        let (train_idx, test_idx) = split_indices(&data, 0.8, 1).unwrap();
        let train_set: Vec<PointCloud> = train_idx.iter().map(|&i| data[i].clone()).collect();
        let test_set: Vec<PointCloud> = test_idx.iter().map(|&i| data[i].clone()).collect();

        let mut model = PointClassifier::new(2, 5);
        let config = TrainConfig {
            epochs: 5,
            batch_size: 8,
            step: 3e-3,
            seed: 11,
            ..TrainConfig::default()
        };
        let report = train(&mut model, &train_set, &test_set, &config).unwrap();
        let final_acc = *report.epoch_test_accuracy.last().unwrap();
        assert!(final_acc >= 0.99, "test accuracy {final_acc}");
    }

    #[test]
    fn training_is_deterministic_for_equal_seeds() {
        let data = synth_dataset(2, 64, 8);
        let config = TrainConfig {
            epochs: 3,
            batch_size: 4,
            step: 1e-3,
            seed: 42,
            ..TrainConfig::default()
        };
        let mut a = PointClassifier::new(8, 1);
        let mut b = PointClassifier::new(8, 1);
        let ra = train(&mut a, &data, &data, &config).unwrap();
        let rb = train(&mut b, &data, &data, &config).unwrap();
        assert_eq!(ra, rb);
        assert_eq!(a, b);
    }

    /// Full-scale training benchmark; expensive, exercised by the
    /// acceptance suite rather than the default unit run.
    #[test]
    #[ignore]
    fn full_scale_training_benchmark() {
        let data = synth_dataset(200, 1024, 1234);
        let config = TrainConfig::default();
        let (train_idx, test_idx) = split_indices(&data, config.split_fraction, 2).unwrap();
        let train_set: Vec<PointCloud> = train_idx.iter().map(|&i| data[i].clone()).collect();
        let test_set: Vec<PointCloud> = test_idx.iter().map(|&i| data[i].clone()).collect();

        let start = std::time::Instant::now();
        let mut model = PointClassifier::new(8, 77);
        let report = train(&mut model, &train_set, &test_set, &config).unwrap();
        println!(
            "trained {} samples in {:.1}s\n  test acc {:?}\n  loss {:?}",
            train_set.len(),
            start.elapsed().as_secs_f64(),
            report.epoch_test_accuracy,
            report.epoch_loss
        );
        assert!(*report.epoch_test_accuracy.last().unwrap() >= 0.90);
    }
}
