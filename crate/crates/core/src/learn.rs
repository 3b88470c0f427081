//! Training-time math: winner-takes-all assignment, time-weighted L1 losses,
//! and a small two-layer regressor that maps hand-built scene features to
//! displacement offsets plus a confidence logit. Gradients are computed
//! analytically and checked against finite differences in the tests.

use std::path::Path as FsPath;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{interp_along, signed_box_separation, wrap_angle, OrientedBox, Polyline};
use crate::planner::{gen_candidates, DisplacementAnchors, PathAnchorSet};
use crate::scene::{Frame, PlanLabels};

#[derive(Debug, Error, PartialEq)]
pub enum LearnError {
    #[error("shape mismatch: {0}")]
    ShapeError(String),
    #[error("training diverged: loss is not finite at epoch {0}")]
    TrainingDiverged(usize),
}

/// Distance horizon for proximity features; clearances are clipped here.
pub const FEATURE_DIST_CAP: f64 = 20.0;

/// Time-banded loss weights: early steps count most.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LossWeights {
    pub path_weights: Vec<f64>,
    pub disp_weights: Vec<f64>,
    pub lambda_drivepath: f64,
    pub lambda_plan: f64,
}

fn banded_weights(n: usize) -> Vec<f64> {
    (1..=n)
        .map(|t| {
            if t <= 5 {
                1.0
            } else if t <= 11 {
                0.6
            } else {
                0.4
            }
        })
        .collect()
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            path_weights: banded_weights(15),
            disp_weights: banded_weights(15),
            lambda_drivepath: 2.0,
            lambda_plan: 2.0,
        }
    }
}

/// Index of the anchor whose flattened representation is closest (L2) to the
/// ground truth; ties go to the lowest index.
pub fn wta_assign<T: AsRef<[f64]>>(anchor_sets: &[T], gt: &[f64]) -> Result<usize, LearnError> {
    if anchor_sets.is_empty() {
        return Err(LearnError::ShapeError("no anchors".into()));
    }
    let mut best = 0usize;
    let mut best_d = f64::INFINITY;
    for (i, a) in anchor_sets.iter().enumerate() {
        let a = a.as_ref();
        if a.len() != gt.len() {
            return Err(LearnError::ShapeError(format!(
                "anchor {i} has {} entries, ground truth has {}",
                a.len(),
                gt.len()
            )));
        }
        let d: f64 = a.iter().zip(gt).map(|(x, y)| (x - y) * (x - y)).sum();
        if d < best_d {
            best_d = d;
            best = i;
        }
    }
    Ok(best)
}

pub fn flatten_polyline(p: &Polyline) -> Vec<f64> {
    p.points().iter().flat_map(|&(x, y)| [x, y]).collect()
}

/// Time-weighted L1 between two paths: sum_t w_t (|dx_t| + |dy_t|).
pub fn weighted_l1_path(pred: &Polyline, gt: &Polyline, w: &LossWeights) -> Result<f64, LearnError> {
    if pred.len() != gt.len() {
        return Err(LearnError::ShapeError(format!(
            "pred has {} points, gt has {}",
            pred.len(),
            gt.len()
        )));
    }
    if w.path_weights.len() < pred.len() {
        return Err(LearnError::ShapeError(format!(
            "{} path weights for {} points",
            w.path_weights.len(),
            pred.len()
        )));
    }
    Ok(pred
        .points()
        .iter()
        .zip(gt.points())
        .zip(&w.path_weights)
        .map(|((p, g), wt)| wt * ((p.0 - g.0).abs() + (p.1 - g.1).abs()))
        .sum())
}

/// Time-weighted L1 between two scalar sequences.
pub fn weighted_l1_disp(pred: &[f64], gt: &[f64], weights: &[f64]) -> Result<f64, LearnError> {
    if pred.len() != gt.len() {
        return Err(LearnError::ShapeError(format!(
            "pred has {} values, gt has {}",
            pred.len(),
            gt.len()
        )));
    }
    if weights.len() < pred.len() {
        return Err(LearnError::ShapeError(format!(
            "{} weights for {} values",
            weights.len(),
            pred.len()
        )));
    }
    Ok(pred
        .iter()
        .zip(gt)
        .zip(weights)
        .map(|((p, g), w)| w * (p - g).abs())
        .sum())
}

/// Two affine layers with a tanh in between. The output holds T+1 offset
/// values followed by one score logit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressorParams {
    pub dims: (usize, usize, usize),
    #[serde(rename = "W1")]
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    #[serde(rename = "W2")]
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

impl RegressorParams {
    pub fn zeros(input: usize, hidden: usize, output: usize) -> Self {
        Self {
            dims: (input, hidden, output),
            w1: vec![0.0; hidden * input],
            b1: vec![0.0; hidden],
            w2: vec![0.0; output * hidden],
            b2: vec![0.0; output],
        }
    }

    pub fn random<R: Rng>(input: usize, hidden: usize, output: usize, rng: &mut R) -> Self {
        let mut p = Self::zeros(input, hidden, output);
        let s1 = 1.0 / (input as f64).sqrt();
        let s2 = 1.0 / (hidden as f64).sqrt();
        for w in p.w1.iter_mut() {
            *w = (rng.gen::<f64>() * 2.0 - 1.0) * s1;
        }
        for w in p.w2.iter_mut() {
            *w = (rng.gen::<f64>() * 2.0 - 1.0) * s2;
        }
        p
    }

    /// Number of future displacement steps encoded by the output layer.
    pub fn horizon(&self) -> usize {
        self.dims.2 - 2
    }

    fn check_features(&self, features: &[f64]) -> Result<(), LearnError> {
        if features.len() != self.dims.0 {
            return Err(LearnError::ShapeError(format!(
                "feature dim {} does not match input dim {}",
                features.len(),
                self.dims.0
            )));
        }
        Ok(())
    }

    pub fn save(&self, path: &FsPath) -> std::io::Result<()> {
        std::fs::write(path, serde_json::to_string(self).unwrap() + "\n")
    }

    pub fn load(path: &FsPath) -> Result<Self, LearnError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| LearnError::ShapeError(format!("read params: {e}")))?;
        let p: Self = serde_json::from_str(&text)
            .map_err(|e| LearnError::ShapeError(format!("parse params: {e}")))?;
        if p.w1.len() != p.dims.1 * p.dims.0
            || p.b1.len() != p.dims.1
            || p.w2.len() != p.dims.2 * p.dims.1
            || p.b2.len() != p.dims.2
        {
            return Err(LearnError::ShapeError("declared dims inconsistent".into()));
        }
        Ok(p)
    }
}

struct ForwardTrace {
    hidden: Vec<f64>,
    output: Vec<f64>,
}

fn forward_trace(params: &RegressorParams, features: &[f64]) -> ForwardTrace {
    let (n_in, n_hid, n_out) = params.dims;
    let mut hidden = vec![0.0; n_hid];
    for h in 0..n_hid {
        let mut z = params.b1[h];
        for (i, f) in features.iter().enumerate().take(n_in) {
            z += params.w1[h * n_in + i] * f;
        }
        hidden[h] = z.tanh();
    }
    let mut output = vec![0.0; n_out];
    for (o, out) in output.iter_mut().enumerate() {
        let mut z = params.b2[o];
        for (h, a) in hidden.iter().enumerate() {
            z += params.w2[o * n_hid + h] * a;
        }
        *out = z;
    }
    ForwardTrace { hidden, output }
}

/// Evaluate the regressor: T+1 displacement offsets and a score logit.
pub fn forward(params: &RegressorParams, features: &[f64]) -> Result<(Vec<f64>, f64), LearnError> {
    params.check_features(features)?;
    let trace = forward_trace(params, features);
    let mut offsets = trace.output;
    let logit = offsets.pop().unwrap();
    Ok((offsets, logit))
}

/// One training item: per-candidate features and anchors, the label sequence,
/// and the WTA winner among the candidates.
#[derive(Debug, Clone)]
pub struct TrainSample {
    pub features: Vec<Vec<f64>>,
    pub anchors: Vec<Vec<f64>>,
    pub gt: Vec<f64>,
    pub winner: usize,
}

/// Gradient container mirroring RegressorParams.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

impl Gradients {
    fn zeros(p: &RegressorParams) -> Self {
        Self {
            w1: vec![0.0; p.w1.len()],
            b1: vec![0.0; p.b1.len()],
            w2: vec![0.0; p.w2.len()],
            b2: vec![0.0; p.b2.len()],
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn sign0(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Mean batch loss and its analytic gradients.
///
/// Per sample: the winner candidate's displacement prediction (anchor plus
/// offsets, future steps only) is supervised with the time-weighted L1 scaled
/// by lambda_plan; every candidate's logit is supervised with binary
/// cross-entropy against winner membership, averaged over candidates.
/// Non-winner regression branches receive no gradient.
pub fn loss_and_grad(
    params: &RegressorParams,
    batch: &[TrainSample],
    weights: &LossWeights,
) -> Result<(f64, Gradients), LearnError> {
    let (n_in, n_hid, _n_out) = params.dims;
    let horizon = params.horizon();
    let mut grad = Gradients::zeros(params);
    let mut total_loss = 0.0;
    let scale = 1.0 / batch.len().max(1) as f64;

    for sample in batch {
        if sample.winner >= sample.features.len() {
            return Err(LearnError::ShapeError(format!(
                "winner index {} out of range for {} candidates",
                sample.winner,
                sample.features.len()
            )));
        }
        if sample.gt.len() != horizon + 1 {
            return Err(LearnError::ShapeError(format!(
                "gt has {} values, expected {}",
                sample.gt.len(),
                horizon + 1
            )));
        }
        let m = sample.features.len() as f64;
        for (ci, features) in sample.features.iter().enumerate() {
            params.check_features(features)?;
            let trace = forward_trace(params, features);
            let logit = *trace.output.last().unwrap();
            let p = sigmoid(logit);
            let y = if ci == sample.winner { 1.0 } else { 0.0 };
            let eps = 1e-12;
            total_loss -= scale / m * (y * (p + eps).ln() + (1.0 - y) * (1.0 - p + eps).ln());

            // output-layer error terms
            let mut d_out = vec![0.0; trace.output.len()];
            *d_out.last_mut().unwrap() = scale / m * (p - y);

            if ci == sample.winner {
                let anchor = &sample.anchors[ci];
                for t in 1..=horizon {
                    let pred = anchor[t] + trace.output[t];
                    let residual = pred - sample.gt[t];
                    let w = weights.disp_weights[t - 1];
                    total_loss += scale * weights.lambda_plan * w * residual.abs();
                    d_out[t] = scale * weights.lambda_plan * w * sign0(residual);
                }
            }

            // backprop through the two layers
            let mut d_hidden = vec![0.0; n_hid];
            for (o, &doo) in d_out.iter().enumerate() {
                if doo == 0.0 {
                    continue;
                }
                grad.b2[o] += doo;
                for h in 0..n_hid {
                    grad.w2[o * n_hid + h] += doo * trace.hidden[h];
                    d_hidden[h] += doo * params.w2[o * n_hid + h];
                }
            }
            for h in 0..n_hid {
                let dz = d_hidden[h] * (1.0 - trace.hidden[h] * trace.hidden[h]);
                if dz == 0.0 {
                    continue;
                }
                grad.b1[h] += dz;
                for (i, f) in features.iter().enumerate().take(n_in) {
                    grad.w1[h * n_in + i] += dz * f;
                }
            }
        }
    }
    Ok((total_loss, grad))
}

/// Plain stochastic gradient descent with per-epoch shuffling; returns the
/// trained parameters and the mean per-epoch loss history.
pub fn train<R: Rng>(
    mut params: RegressorParams,
    dataset: &[TrainSample],
    weights: &LossWeights,
    lr: f64,
    epochs: usize,
    rng: &mut R,
) -> Result<(RegressorParams, Vec<f64>), LearnError> {
    assert!(lr >= 0.0, "learning rate must be non-negative");
    let mut history = Vec::with_capacity(epochs);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    for epoch in 0..epochs {
        // Fisher-Yates shuffle
        for i in (1..order.len()).rev() {
            let j = rng.gen_range(0..=i);
            order.swap(i, j);
        }
        let mut epoch_loss = 0.0;
        for &idx in &order {
            let batch = std::slice::from_ref(&dataset[idx]);
            let (loss, grad) = loss_and_grad(&params, batch, weights)?;
            epoch_loss += loss;
            if !loss.is_finite() {
                return Err(LearnError::TrainingDiverged(epoch));
            }
            if lr > 0.0 {
                for (p, g) in params.w1.iter_mut().zip(&grad.w1) {
                    *p -= lr * g;
                }
                for (p, g) in params.b1.iter_mut().zip(&grad.b1) {
                    *p -= lr * g;
                }
                for (p, g) in params.w2.iter_mut().zip(&grad.w2) {
                    *p -= lr * g;
                }
                for (p, g) in params.b2.iter_mut().zip(&grad.b2) {
                    *p -= lr * g;
                }
            }
        }
        history.push(epoch_loss / dataset.len().max(1) as f64);
    }
    Ok((params, history))
}

// ---------------------------------------------------------------------------
// feature engineering

/// Features for one longitudinal candidate rolled out along `path`:
/// globals (ego speed, path curvature, anchor look-ahead) plus, per step,
/// the clipped clearance to the nearest agent and the bearing to it.
pub fn candidate_features(
    path: &Polyline,
    anchor_values: &[f64],
    frame: &Frame,
    ego_dims: (f64, f64),
    look_ahead: f64,
) -> Vec<f64> {
    let horizon = anchor_values.len() - 1;
    let mut out = Vec::with_capacity(3 + 3 * (horizon + 1));
    out.push(frame.ego.speed / 10.0);
    out.push(path_curvature(path));
    out.push(look_ahead / 10.0);
    let mut cum = 0.0;
    for t in 0..=horizon {
        if t > 0 {
            cum += anchor_values[t];
        }
        let pose = interp_along(path, cum).expect("non-negative arc");
        let ego_box = OrientedBox::new(pose, ego_dims.0, ego_dims.1);
        let mut best = FEATURE_DIST_CAP;
        let mut bearing = 0.0;
        let mut found = false;
        for a in &frame.agents {
            let abox = a.box_at_step(t);
            let d = signed_box_separation(&ego_box, &abox);
            if d < best {
                best = d;
                bearing = wrap_angle(
                    (abox.center.y - pose.y).atan2(abox.center.x - pose.x) - pose.heading,
                );
                found = true;
            }
        }
        out.push(best / FEATURE_DIST_CAP);
        if found {
            out.push(bearing.sin());
            out.push(bearing.cos());
        } else {
            out.push(0.0);
            out.push(1.0);
        }
    }
    out
}

/// Mean absolute heading change per meter along the path.
fn path_curvature(path: &Polyline) -> f64 {
    let pts = path.points();
    let mut total_turn = 0.0;
    let mut prev_heading: Option<f64> = None;
    for w in pts.windows(2) {
        let dx = w[1].0 - w[0].0;
        let dy = w[1].1 - w[0].1;
        if dx * dx + dy * dy < 1e-12 {
            continue;
        }
        let h = dy.atan2(dx);
        if let Some(ph) = prev_heading {
            total_turn += wrap_angle(h - ph).abs();
        }
        prev_heading = Some(h);
    }
    total_turn / path.total_length().max(1e-9)
}

/// Feature dimension produced by `candidate_features` for a given horizon.
pub fn feature_dim(horizon: usize) -> usize {
    3 + 3 * (horizon + 1)
}

/// Build the WTA training sample for one labeled frame: candidates come from
/// the ground-truth-closest anchor path, features are extracted along it, and
/// the winner is the displacement anchor nearest the labels.
pub fn build_training_sample(
    frame: &Frame,
    labels: &PlanLabels,
    path_set: &PathAnchorSet,
    disp_anchors: &DisplacementAnchors,
    ego_dims: (f64, f64),
) -> Result<TrainSample, LearnError> {
    let candidates = gen_candidates(frame, &labels.drive_path, path_set, disp_anchors);
    let m = disp_anchors.count();
    // ground-truth-closest path among the placed anchors
    let placed: Vec<Vec<f64>> = (0..path_set.count())
        .map(|pi| flatten_polyline(&candidates[pi * m].path))
        .collect();
    let gt_flat = flatten_polyline(&labels.drive_path);
    let path_idx = wta_assign(&placed, &gt_flat)?;

    let mut features = Vec::with_capacity(m);
    let mut anchors = Vec::with_capacity(m);
    for mi in 0..m {
        let cand = &candidates[path_idx * m + mi];
        features.push(candidate_features(
            &cand.path,
            &cand.displacements.values,
            frame,
            ego_dims,
            disp_anchors.look_ahead(mi),
        ));
        anchors.push(cand.displacements.values.clone());
    }
    let winner = wta_assign(&anchors, &labels.displacements.values)?;
    Ok(TrainSample {
        features,
        anchors,
        gt: labels.displacements.values.clone(),
        winner,
    })
}
