//! Cascaded candidate planning: anchor construction by clustering, candidate
//! generation over path x displacement anchors, deterministic cost-descent
//! refinement of the longitudinal profile, collision-penalized scoring, and
//! hierarchical selection.

use std::path::Path as FsPath;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{boxes_overlap, interp_along, OrientedBox, Polyline, Pose2};
use crate::scene::{DisplacementSequence, Frame};

#[derive(Debug, Error)]
pub enum PlannerError {
    #[error("cluster error: {0}")]
    ClusterError(String),
    #[error("no candidates to select from")]
    NoCandidates,
    #[error("anchor file error: {0}")]
    AnchorFile(String),
}

/// Scaling grid used by the deterministic refinement: [0, 1.5] at 0.01.
pub const REFINE_GRID_STEPS: usize = 151;

pub fn refine_grid_value(i: usize) -> f64 {
    i as f64 / 100.0
}

/// Drive-path prototypes in the ego-local frame, P points each at ~2 m.
#[derive(Debug, Clone, PartialEq)]
pub struct PathAnchorSet {
    pub anchors: Vec<Polyline>,
}

impl PathAnchorSet {
    pub fn count(&self) -> usize {
        self.anchors.len()
    }
}

/// Constant per-step displacement prototypes, one row per anchor, covering
/// the current step plus T future steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisplacementAnchors {
    pub base: Vec<Vec<f64>>,
    pub dt: f64,
}

impl DisplacementAnchors {
    /// Build anchors from look-ahead distances: a look-ahead of L meters per
    /// second of travel becomes a constant per-step value of L * dt.
    pub fn from_look_aheads(look_aheads: &[f64], horizon: usize, dt: f64) -> Self {
        let base = look_aheads
            .iter()
            .map(|&l| vec![l * dt; horizon + 1])
            .collect();
        Self { base, dt }
    }

    pub fn count(&self) -> usize {
        self.base.len()
    }

    /// The look-ahead (m at one second) an anchor row encodes.
    pub fn look_ahead(&self, m: usize) -> f64 {
        self.base[m][0] / self.dt
    }
}

/// One multi-modal planning candidate: a world-frame path with its score and
/// a longitudinal profile with its score.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidatePlan {
    pub path: Polyline,
    pub path_score: f64,
    pub displacements: DisplacementSequence,
    pub long_score: f64,
    pub anchor_ids: (usize, usize),
}

/// Weights for the deterministic refinement cost and the ego footprint used
/// when rolling candidates out against agent predictions.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CostConfig {
    pub w_progress: f64,
    pub w_collision: f64,
    pub w_smooth: f64,
    /// Interval at which the closed-loop runner scans for contact (s).
    pub collision_check_dt: f64,
    pub ego_length: f64,
    pub ego_width: f64,
}

impl Default for CostConfig {
    fn default() -> Self {
        Self {
            w_progress: 1.0,
            w_collision: 100.0,
            w_smooth: 0.1,
            collision_check_dt: 0.05,
            ego_length: 5.0,
            ego_width: 2.2,
        }
    }
}

impl CostConfig {
    pub fn ego_dims(&self) -> (f64, f64) {
        (self.ego_length, self.ego_width)
    }
}

fn flatten_path(p: &Polyline) -> Vec<f64> {
    p.points().iter().flat_map(|&(x, y)| [x, y]).collect()
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Outcome of anchor clustering: the anchor set plus the per-iteration
/// within-cluster inertia (sum of squared distances).
pub struct ClusterOutcome {
    pub set: PathAnchorSet,
    pub inertia: Vec<f64>,
}

/// K-means over ground-truth paths flattened to 2P-dimensional vectors.
/// Cluster means are re-interpreted as anchor polylines.
pub fn cluster_path_anchors<R: Rng>(
    gt_paths: &[Polyline],
    k: usize,
    iters: usize,
    rng: &mut R,
) -> Result<ClusterOutcome, PlannerError> {
    if k == 0 {
        return Err(PlannerError::ClusterError("k must be at least 1".into()));
    }
    let vectors: Vec<Vec<f64>> = gt_paths.iter().map(flatten_path).collect();
    if vectors.iter().any(|v| v.len() != vectors[0].len()) {
        return Err(PlannerError::ClusterError(
            "paths must share a point count".into(),
        ));
    }
    let mut distinct: Vec<usize> = Vec::new();
    for (i, v) in vectors.iter().enumerate() {
        if !distinct.iter().any(|&j| vectors[j] == *v) {
            distinct.push(i);
        }
    }
    if k > distinct.len() {
        return Err(PlannerError::ClusterError(format!(
            "k = {k} exceeds {} distinct paths",
            distinct.len()
        )));
    }

    // initial centroids: k distinct paths drawn without replacement
    let mut pool = distinct;
    let mut centroids: Vec<Vec<f64>> = Vec::with_capacity(k);
    for _ in 0..k {
        let pick = rng.gen_range(0..pool.len());
        centroids.push(vectors[pool.swap_remove(pick)].clone());
    }

    let mut inertia = Vec::new();
    let mut assign = vec![0usize; vectors.len()];
    for _ in 0..iters.max(1) {
        let mut total = 0.0;
        for (i, v) in vectors.iter().enumerate() {
            let (best, d) = centroids
                .iter()
                .enumerate()
                .map(|(c, cv)| (c, sq_dist(v, cv)))
                .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then(a.0.cmp(&b.0)))
                .unwrap();
            assign[i] = best;
            total += d;
        }
        inertia.push(total);
        let mut sums = vec![vec![0.0; vectors[0].len()]; k];
        let mut counts = vec![0usize; k];
        for (i, v) in vectors.iter().enumerate() {
            counts[assign[i]] += 1;
            for (s, x) in sums[assign[i]].iter_mut().zip(v) {
                *s += x;
            }
        }
        let mut converged = true;
        for c in 0..k {
            if counts[c] == 0 {
                continue; // empty cluster keeps its centroid
            }
            let mean: Vec<f64> = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            if mean != centroids[c] {
                converged = false;
            }
            centroids[c] = mean;
        }
        if converged {
            break;
        }
    }

    let anchors = centroids
        .into_iter()
        .map(|v| {
            let pts = v.chunks(2).map(|c| (c[0], c[1])).collect();
            Polyline::new(pts).map_err(|e| PlannerError::ClusterError(e.to_string()))
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(ClusterOutcome {
        set: PathAnchorSet { anchors },
        inertia,
    })
}

/// Synthetic ego-local anchor fan: arcs of evenly spaced curvature around
/// straight ahead, at the drive-path spacing. A stand-in when no clustered
/// anchors are available.
pub fn fan_path_anchors(count: usize, path_points: usize, max_curvature: f64) -> PathAnchorSet {
    let n = count.max(1);
    let anchors = (0..n)
        .map(|i| {
            let kappa = if n == 1 {
                0.0
            } else {
                -max_curvature + 2.0 * max_curvature * i as f64 / (n - 1) as f64
            };
            let mut pts = Vec::with_capacity(path_points);
            let mut heading = 0.0f64;
            let mut pos = (0.0, 0.0);
            pts.push(pos);
            for _ in 1..path_points {
                heading += kappa * 2.0;
                pos = (pos.0 + 2.0 * heading.cos(), pos.1 + 2.0 * heading.sin());
                pts.push(pos);
            }
            Polyline::new(pts).expect("fan anchor is valid")
        })
        .collect();
    PathAnchorSet { anchors }
}

/// Place an ego-local polyline into the world frame at `ego_pose`.
pub fn place_in_world(local: &Polyline, ego_pose: &Pose2) -> Polyline {
    let pts = local
        .points()
        .iter()
        .map(|&(x, y)| ego_pose.local_to_world(x, y))
        .collect();
    Polyline::new(pts).expect("placement preserves validity")
}

/// Transform a world polyline into the ego-local frame of `ego_pose`.
pub fn to_ego_frame(world: &Polyline, ego_pose: &Pose2) -> Polyline {
    let pts = world
        .points()
        .iter()
        .map(|&(x, y)| ego_pose.world_to_local(x, y))
        .collect();
    Polyline::new(pts).expect("transform preserves validity")
}

/// Negative RMS point distance between two paths, compared pointwise.
pub fn path_affinity(a: &Polyline, b: &Polyline) -> f64 {
    let n = a.len().min(b.len());
    let mut acc = 0.0;
    for i in 0..n {
        let pa = a.points()[i];
        let pb = b.points()[i];
        acc += (pa.0 - pb.0).powi(2) + (pa.1 - pb.1).powi(2);
    }
    -(acc / n as f64).sqrt()
}

/// Emit the N_d x M candidate grid for one frame: each path anchor rigidly
/// placed at the ego pose and paired with every displacement anchor.
pub fn gen_candidates(
    frame: &Frame,
    target_path: &Polyline,
    path_set: &PathAnchorSet,
    disp_anchors: &DisplacementAnchors,
) -> Vec<CandidatePlan> {
    let mut out = Vec::with_capacity(path_set.count() * disp_anchors.count());
    for (pi, anchor) in path_set.anchors.iter().enumerate() {
        let world_path = place_in_world(anchor, &frame.ego.pose);
        let path_score = path_affinity(&world_path, target_path);
        for (mi, base) in disp_anchors.base.iter().enumerate() {
            out.push(CandidatePlan {
                path: world_path.clone(),
                path_score,
                displacements: DisplacementSequence::new(base.clone(), disp_anchors.dt),
                long_score: 0.0,
                anchor_ids: (pi, mi),
            });
        }
    }
    out
}

/// Count rollout steps (t = 1..=T) where the ego box, placed at the
/// candidate's cumulative displacement along `path`, overlaps any agent's
/// predicted box for that step.
pub fn rollout_overlap_steps(
    path: &Polyline,
    values: &[f64],
    frame: &Frame,
    ego_dims: (f64, f64),
) -> usize {
    let mut count = 0;
    let mut cum = 0.0;
    for t in 1..values.len() {
        cum += values[t];
        let pose = interp_along(path, cum).expect("non-negative arc");
        let ego_box = OrientedBox::new(pose, ego_dims.0, ego_dims.1);
        if frame
            .agents
            .iter()
            .any(|a| boxes_overlap(&ego_box, &a.box_at_step(t)))
        {
            count += 1;
        }
    }
    count
}

/// Refinement cost of a displacement profile on a path.
pub fn refine_cost(path: &Polyline, values: &[f64], frame: &Frame, cfg: &CostConfig) -> f64 {
    let progress: f64 = values[1..].iter().sum();
    let smooth: f64 = values.windows(2).map(|w| (w[1] - w[0]).powi(2)).sum();
    let overlaps = rollout_overlap_steps(path, values, frame, cfg.ego_dims()) as f64;
    -cfg.w_progress * progress + cfg.w_collision * overlaps + cfg.w_smooth * smooth
}

/// Deterministic anchor refinement: scan a uniform scaling of the anchor
/// profile over [0, 1.5] at 0.01 resolution and keep the cost argmin
/// (ties: smallest scale). Displacements never go negative.
pub fn refine_displacements(
    candidate: &CandidatePlan,
    frame: &Frame,
    cfg: &CostConfig,
) -> CandidatePlan {
    let base = &candidate.displacements.values;
    let mut best_cost = f64::INFINITY;
    let mut best_values: Vec<f64> = base.clone();
    for i in 0..REFINE_GRID_STEPS {
        let lambda = refine_grid_value(i);
        let values: Vec<f64> = base.iter().map(|v| (v * lambda).max(0.0)).collect();
        let cost = refine_cost(&candidate.path, &values, frame, cfg);
        if cost < best_cost {
            best_cost = cost;
            best_values = values;
        }
    }
    let mut out = candidate.clone();
    out.displacements = DisplacementSequence::new(best_values, candidate.displacements.dt);
    out
}

/// Fill in `long_score` for every candidate: progress reward minus a
/// per-overlap-step collision penalty.
pub fn collision_penalized_scores(
    candidates: &mut [CandidatePlan],
    frame: &Frame,
    cfg: &CostConfig,
) {
    for c in candidates.iter_mut() {
        let progress: f64 = c.displacements.values[1..].iter().sum();
        let overlaps =
            rollout_overlap_steps(&c.path, &c.displacements.values, frame, cfg.ego_dims());
        c.long_score = cfg.w_progress * progress - cfg.w_collision * overlaps as f64;
    }
}

/// Hierarchical selection: the path index with the best path score wins
/// (ties: lowest index), then the best long score within that path
/// (ties: lowest displacement index).
pub fn select_plan(candidates: &[CandidatePlan]) -> Result<&CandidatePlan, PlannerError> {
    if candidates.is_empty() {
        return Err(PlannerError::NoCandidates);
    }
    let mut best_path: Option<(usize, f64)> = None;
    for c in candidates {
        let replace = match best_path {
            None => true,
            Some((pi, score)) => {
                c.path_score > score || (c.path_score == score && c.anchor_ids.0 < pi)
            }
        };
        if replace {
            best_path = Some((c.anchor_ids.0, c.path_score));
        }
    }
    let path_idx = best_path.unwrap().0;
    candidates
        .iter()
        .filter(|c| c.anchor_ids.0 == path_idx)
        .fold(None::<&CandidatePlan>, |best, c| match best {
            None => Some(c),
            Some(b) => {
                if c.long_score > b.long_score
                    || (c.long_score == b.long_score && c.anchor_ids.1 < b.anchor_ids.1)
                {
                    Some(c)
                } else {
                    Some(b)
                }
            }
        })
        .ok_or(PlannerError::NoCandidates)
}

/// Timed waypoints from a path and displacement profile: waypoint t sits at
/// the cumulative future displacement through step t, at time t * dt.
pub fn reconstruct_trajectory(path: &Polyline, disps: &DisplacementSequence) -> Vec<(f64, Pose2)> {
    let mut out = Vec::with_capacity(disps.horizon());
    let mut cum = 0.0;
    for t in 1..=disps.horizon() {
        cum += disps.values[t];
        let pose = interp_along(path, cum).expect("non-negative arc");
        out.push((t as f64 * disps.dt, pose));
    }
    out
}

// ---------------------------------------------------------------------------
// anchor file format: {"paths": [[[x,y],...],...], "disp": [[v,...],...], "dt": s}

#[derive(Serialize, Deserialize)]
struct AnchorFileWire {
    paths: Vec<Vec<[f64; 2]>>,
    disp: Vec<Vec<f64>>,
    dt: f64,
}

pub fn save_anchors(
    path_set: &PathAnchorSet,
    disp: &DisplacementAnchors,
    path: &FsPath,
) -> Result<(), PlannerError> {
    let wire = AnchorFileWire {
        paths: path_set
            .anchors
            .iter()
            .map(|p| p.points().iter().map(|&(x, y)| [x, y]).collect())
            .collect(),
        disp: disp.base.clone(),
        dt: disp.dt,
    };
    let text = serde_json::to_string(&wire).map_err(|e| PlannerError::AnchorFile(e.to_string()))?;
    std::fs::write(path, text + "\n").map_err(|e| PlannerError::AnchorFile(e.to_string()))
}

pub fn load_anchors(path: &FsPath) -> Result<(PathAnchorSet, DisplacementAnchors), PlannerError> {
    let text =
        std::fs::read_to_string(path).map_err(|e| PlannerError::AnchorFile(e.to_string()))?;
    let wire: AnchorFileWire =
        serde_json::from_str(&text).map_err(|e| PlannerError::AnchorFile(e.to_string()))?;
    let anchors = wire
        .paths
        .into_iter()
        .map(|pts| {
            Polyline::new(pts.iter().map(|p| (p[0], p[1])).collect())
                .map_err(|e| PlannerError::AnchorFile(e.to_string()))
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok((
        PathAnchorSet { anchors },
        DisplacementAnchors {
            base: wire.disp,
            dt: wire.dt,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{
        derive_labels, AgentCategory, AgentTrack, EgoRecord, MapLine, LABEL_DT,
    };
    use rand::rngs::StdRng;
    use rand::SeedableRng;

    const LOOK_AHEADS: [f64; 5] = [0.25, 1.7, 4.0, 6.0, 8.5];

    fn straight_local_path(p: usize, bias: f64) -> Polyline {
        Polyline::new((0..p).map(|i| (2.0 * i as f64, bias)).collect()).unwrap()
    }

    fn curved_local_path(p: usize, curvature: f64) -> Polyline {
        let mut pts = Vec::with_capacity(p);
        let mut heading = 0.0;
        let mut pos = (0.0, 0.0);
        pts.push(pos);
        for _ in 1..p {
            heading += curvature * 2.0;
            pos = (pos.0 + 2.0 * f64::cos(heading), pos.1 + 2.0 * f64::sin(heading));
            pts.push(pos);
        }
        Polyline::new(pts).unwrap()
    }

    fn frame_with_agents(agents: Vec<AgentTrack>) -> Frame {
        Frame {
            timestamp: 0.0,
            ego: EgoRecord {
                pose: Pose2::new(0.0, 0.0, 0.0),
                speed: 5.0,
                future_trajectory: vec![],
            },
            agents,
            map_lines: Vec::<MapLine>::new(),
        }
    }

    fn parked(id: u64, x: f64, y: f64) -> AgentTrack {
        let pose = Pose2::new(x, y, 0.0);
        AgentTrack {
            id,
            category: AgentCategory::Vehicle,
            bbox: OrientedBox::new(pose, 4.5, 2.0),
            future: vec![pose; 15],
            confidence: 0.5,
        }
    }

    fn default_anchor_sets() -> (PathAnchorSet, DisplacementAnchors) {
        let paths = vec![
            straight_local_path(15, 0.0),
            curved_local_path(15, 0.02),
            curved_local_path(15, -0.02),
            curved_local_path(15, 0.05),
            curved_local_path(15, -0.05),
            straight_local_path(15, 1.0),
        ];
        (
            PathAnchorSet { anchors: paths },
            DisplacementAnchors::from_look_aheads(&LOOK_AHEADS, 15, LABEL_DT),
        )
    }

    #[test]
    fn kmeans_single_cluster_is_mean() {
        let paths = vec![
            straight_local_path(5, 0.0),
            straight_local_path(5, 2.0),
            straight_local_path(5, 4.0),
        ];
        let mut rng = StdRng::seed_from_u64(0);
        let out = cluster_path_anchors(&paths, 1, 50, &mut rng).unwrap();
        assert_eq!(out.set.count(), 1);
        for (i, &(x, y)) in out.set.anchors[0].points().iter().enumerate() {
            assert!((x - 2.0 * i as f64).abs() < 1e-12);
            assert!((y - 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn kmeans_separates_two_bundles() {
        let mut rng = StdRng::seed_from_u64(1);
        let mut paths = Vec::new();
        for j in 0..20 {
            let jitter = (j as f64 - 10.0) * 0.02;
            paths.push(curved_local_path(15, 0.04 + jitter * 0.01));
            paths.push(curved_local_path(15, -0.04 - jitter * 0.01));
        }
        let out = cluster_path_anchors(&paths, 2, 100, &mut rng).unwrap();
        // direct mean of each bundle
        let bundle_mean = |sign: f64| -> Vec<f64> {
            let members: Vec<Vec<f64>> = paths
                .iter()
                .filter(|p| p.points()[14].1 * sign > 0.0)
                .map(flatten_path)
                .collect();
            let mut mean = vec![0.0; members[0].len()];
            for m in &members {
                for (s, v) in mean.iter_mut().zip(m) {
                    *s += v;
                }
            }
            mean.iter().map(|s| s / members.len() as f64).collect()
        };
        for anchor in &out.set.anchors {
            let av = flatten_path(anchor);
            let sign = if anchor.points()[14].1 > 0.0 { 1.0 } else { -1.0 };
            let mean = bundle_mean(sign);
            let rms = (sq_dist(&av, &mean) / (av.len() / 2) as f64).sqrt();
            assert!(rms < 0.5, "anchor rms {rms}");
        }
    }

    #[test]
    fn kmeans_inertia_non_increasing() {
        let mut rng = StdRng::seed_from_u64(2);
        let mut paths = Vec::new();
        for j in 0..30 {
            paths.push(curved_local_path(10, (j as f64 - 15.0) * 0.004));
        }
        let out = cluster_path_anchors(&paths, 4, 50, &mut rng).unwrap();
        for w in out.inertia.windows(2) {
            assert!(w[1] <= w[0] + 1e-9, "inertia rose: {:?}", out.inertia);
        }
    }

    #[test]
    fn kmeans_too_many_clusters_errors() {
        let paths = vec![straight_local_path(5, 0.0), straight_local_path(5, 0.0)];
        let mut rng = StdRng::seed_from_u64(3);
        assert!(matches!(
            cluster_path_anchors(&paths, 2, 10, &mut rng),
            Err(PlannerError::ClusterError(_))
        ));
    }

    #[test]
    fn candidate_grid_is_complete() {
        let (paths, disps) = default_anchor_sets();
        let frame = frame_with_agents(vec![]);
        let target = straight_local_path(15, 0.0);
        let cands = gen_candidates(&frame, &target, &paths, &disps);
        assert_eq!(cands.len(), 30);
        for c in &cands {
            assert!(c.path_score.is_finite());
            assert!(c.displacements.values.iter().all(|v| *v >= 0.0));
            assert_eq!(c.displacements.values.len(), 16);
        }
    }

    #[test]
    fn matching_anchor_gets_best_path_score() {
        let (paths, disps) = default_anchor_sets();
        let frame = frame_with_agents(vec![]);
        let target = place_in_world(&paths.anchors[3], &frame.ego.pose);
        let cands = gen_candidates(&frame, &target, &paths, &disps);
        let best = cands
            .iter()
            .max_by(|a, b| a.path_score.partial_cmp(&b.path_score).unwrap())
            .unwrap();
        assert_eq!(best.anchor_ids.0, 3);
        assert_eq!(best.path_score, 0.0);
        for c in &cands {
            if c.anchor_ids.0 != 3 {
                assert!(c.path_score < 0.0);
            }
        }
    }

    #[test]
    fn refine_empty_scene_maxes_progress() {
        let (paths, disps) = default_anchor_sets();
        let frame = frame_with_agents(vec![]);
        let target = straight_local_path(15, 0.0);
        let cfg = CostConfig::default();
        let cands = gen_candidates(&frame, &target, &paths, &disps);
        for c in &cands {
            let refined = refine_displacements(c, &frame, &cfg);
            for (r, b) in refined
                .displacements
                .values
                .iter()
                .zip(&c.displacements.values)
            {
                assert!((r - 1.5 * b).abs() < 1e-12);
            }
        }
    }

    /// Independent cost evaluation over the full grid: re-derives the
    /// rollout, the overlap count, and each term from scratch.
    fn exhaustive_refine_oracle(
        cand: &CandidatePlan,
        frame: &Frame,
        cfg: &CostConfig,
    ) -> Vec<f64> {
        let mut best_cost = f64::INFINITY;
        let mut best = cand.displacements.values.clone();
        for i in 0..151 {
            let lambda = i as f64 / 100.0;
            let values: Vec<f64> = cand
                .displacements
                .values
                .iter()
                .map(|v| (v * lambda).max(0.0))
                .collect();
            let mut progress = 0.0;
            let mut smooth = 0.0;
            for t in 1..values.len() {
                progress += values[t];
                smooth += (values[t] - values[t - 1]) * (values[t] - values[t - 1]);
            }
            let mut overlaps = 0usize;
            let mut cum = 0.0;
            for t in 1..values.len() {
                cum += values[t];
                let pose = interp_along(&cand.path, cum).unwrap();
                let ego = OrientedBox::new(pose, cfg.ego_length, cfg.ego_width);
                let mut hit = false;
                for a in &frame.agents {
                    if boxes_overlap(&ego, &a.box_at_step(t)) {
                        hit = true;
                    }
                }
                if hit {
                    overlaps += 1;
                }
            }
            let cost = -cfg.w_progress * progress
                + cfg.w_collision * overlaps as f64
                + cfg.w_smooth * smooth;
            if cost < best_cost {
                best_cost = cost;
                best = values;
            }
        }
        best
    }

    #[test]
    fn refine_stops_short_of_parked_agent() {
        let (paths, disps) = default_anchor_sets();
        let frame = frame_with_agents(vec![parked(0, 10.0, 0.0)]);
        let target = straight_local_path(15, 0.0);
        let cfg = CostConfig::default();
        let cands = gen_candidates(&frame, &target, &paths, &disps);
        // the straight path aimed at the agent, fastest anchor
        let c = cands
            .iter()
            .find(|c| c.anchor_ids == (0, 4))
            .unwrap();
        let refined = refine_displacements(c, &frame, &cfg);
        let oracle = exhaustive_refine_oracle(c, &frame, &cfg);
        assert_eq!(refined.displacements.values, oracle);
        // cumulative reach stays short of the contact zone
        let reach = refined.displacements.total_future();
        let pose = interp_along(&refined.path, reach).unwrap();
        let ego = OrientedBox::new(pose, cfg.ego_length, cfg.ego_width);
        assert!(!boxes_overlap(&ego, &frame.agents[0].bbox));
    }

    #[test]
    fn refine_matches_exhaustive_oracle_on_random_scenes() {
        let mut rng = StdRng::seed_from_u64(50);
        let (paths, disps) = default_anchor_sets();
        let cfg = CostConfig::default();
        for _ in 0..60 {
            let n_agents = rand::Rng::gen_range(&mut rng, 0..3);
            let agents = (0..n_agents)
                .map(|i| {
                    parked(
                        i as u64,
                        rand::Rng::gen::<f64>(&mut rng) * 30.0,
                        (rand::Rng::gen::<f64>(&mut rng) - 0.5) * 8.0,
                    )
                })
                .collect();
            let frame = frame_with_agents(agents);
            let target = straight_local_path(15, 0.0);
            let cands = gen_candidates(&frame, &target, &paths, &disps);
            for c in cands.iter().step_by(7) {
                let refined = refine_displacements(c, &frame, &cfg);
                let oracle = exhaustive_refine_oracle(c, &frame, &cfg);
                assert_eq!(refined.displacements.values, oracle);
                // never worse than the raw anchor
                let refined_cost =
                    refine_cost(&c.path, &refined.displacements.values, &frame, &cfg);
                let anchor_cost = refine_cost(&c.path, &c.displacements.values, &frame, &cfg);
                assert!(refined_cost <= anchor_cost + 1e-12);
            }
        }
    }

    #[test]
    fn scores_penalize_overlap_steps_exactly() {
        let (paths, disps) = default_anchor_sets();
        let frame = frame_with_agents(vec![parked(0, 12.0, 0.0)]);
        let target = straight_local_path(15, 0.0);
        let cfg = CostConfig::default();
        let mut cands = gen_candidates(&frame, &target, &paths, &disps);
        collision_penalized_scores(&mut cands, &frame, &cfg);
        // triple-enumeration oracle over (candidate, agent, step)
        for c in &cands {
            let mut overlap_steps = 0;
            let mut cum = 0.0;
            for t in 1..c.displacements.values.len() {
                cum += c.displacements.values[t];
                let pose = interp_along(&c.path, cum).unwrap();
                let ego = OrientedBox::new(pose, cfg.ego_length, cfg.ego_width);
                let mut any = false;
                for a in &frame.agents {
                    if boxes_overlap(&ego, &a.box_at_step(t)) {
                        any = true;
                    }
                }
                if any {
                    overlap_steps += 1;
                }
            }
            let progress: f64 = c.displacements.values[1..].iter().sum();
            let want = cfg.w_progress * progress - cfg.w_collision * overlap_steps as f64;
            assert!((c.long_score - want).abs() < 1e-12);
            if overlap_steps == 0 {
                assert!((c.long_score - cfg.w_progress * progress).abs() < 1e-12);
            }
        }
        // at least one candidate must actually overlap for the test to bite
        assert!(cands.iter().any(|c| c.long_score < 0.0));
    }

    fn mk_candidate(pi: usize, mi: usize, path_score: f64, long_score: f64) -> CandidatePlan {
        CandidatePlan {
            path: straight_local_path(3, 0.0),
            path_score,
            displacements: DisplacementSequence::new(vec![0.5; 4], LABEL_DT),
            long_score,
            anchor_ids: (pi, mi),
        }
    }

    #[test]
    fn select_single_candidate() {
        let cands = vec![mk_candidate(0, 0, -1.0, 2.0)];
        let got = select_plan(&cands).unwrap();
        assert_eq!(got.anchor_ids, (0, 0));
        assert!(matches!(select_plan(&[]), Err(PlannerError::NoCandidates)));
    }

    #[test]
    fn select_is_hierarchical_not_flat() {
        // path 0 wins on path_score; its best long_score (5) loses globally
        // to path 1's candidate (10)
        let cands = vec![
            mk_candidate(0, 0, -0.1, 5.0),
            mk_candidate(0, 1, -0.1, 3.0),
            mk_candidate(1, 0, -2.0, 10.0),
            mk_candidate(1, 1, -2.0, 1.0),
        ];
        let flat_best = cands
            .iter()
            .max_by(|a, b| a.long_score.partial_cmp(&b.long_score).unwrap())
            .unwrap();
        assert_eq!(flat_best.anchor_ids, (1, 0));
        let got = select_plan(&cands).unwrap();
        assert_eq!(got.anchor_ids, (0, 0));
    }

    #[test]
    fn select_invariant_to_order_and_monotone_transform() {
        let base = vec![
            mk_candidate(0, 0, -0.5, 1.0),
            mk_candidate(0, 1, -0.5, 4.0),
            mk_candidate(1, 0, -0.2, 2.0),
            mk_candidate(1, 1, -0.2, 2.0),
            mk_candidate(2, 0, -0.9, 9.0),
        ];
        let want = select_plan(&base).unwrap().anchor_ids;
        assert_eq!(want, (1, 0)); // tie on long_score broken by lower index
        let mut permuted = base.clone();
        permuted.reverse();
        assert_eq!(select_plan(&permuted).unwrap().anchor_ids, want);
        permuted.swap(0, 2);
        assert_eq!(select_plan(&permuted).unwrap().anchor_ids, want);
        // strictly monotone transform of all path scores
        let transformed: Vec<CandidatePlan> = base
            .iter()
            .map(|c| {
                let mut c = c.clone();
                c.path_score = 3.0 * c.path_score + 7.0;
                c
            })
            .collect();
        assert_eq!(select_plan(&transformed).unwrap().anchor_ids, want);
    }

    #[test]
    fn reconstruct_straight_constant_displacement() {
        let path = straight_local_path(20, 0.0);
        let disps = DisplacementSequence::new(vec![1.0; 16], LABEL_DT);
        let traj = reconstruct_trajectory(&path, &disps);
        assert_eq!(traj.len(), 15);
        for (t, (time, pose)) in traj.iter().enumerate() {
            assert!((time - (t + 1) as f64 * LABEL_DT).abs() < 1e-12);
            assert!((pose.x - (t + 1) as f64).abs() < 1e-12);
            assert!(pose.y.abs() < 1e-12);
        }
    }

    #[test]
    fn reconstruct_zero_displacements_stays_at_start() {
        let path = straight_local_path(20, 0.0);
        let disps = DisplacementSequence::new(vec![0.0; 16], LABEL_DT);
        for (_, pose) in reconstruct_trajectory(&path, &disps) {
            assert_eq!((pose.x, pose.y), (0.0, 0.0));
        }
    }

    #[test]
    fn reconstruct_replays_logged_future_within_5cm() {
        // smooth constant-speed arc, radius 25 m
        let radius = 25.0;
        let speed = 6.0;
        let omega = speed / radius;
        let future: Vec<(f64, f64, f64)> = (1..=15)
            .map(|k| {
                let t = k as f64 * LABEL_DT;
                let ang = omega * t;
                (t, radius * ang.sin(), radius * (1.0 - ang.cos()))
            })
            .collect();
        let ego = EgoRecord {
            pose: Pose2::new(0.0, 0.0, 0.0),
            speed,
            future_trajectory: future.clone(),
        };
        let labels = derive_labels(&ego, 15, 15).unwrap();
        let traj = reconstruct_trajectory(&labels.drive_path, &labels.displacements);
        for ((_, pose), (_, fx, fy)) in traj.iter().zip(&future) {
            let err = ((pose.x - fx).powi(2) + (pose.y - fy).powi(2)).sqrt();
            assert!(err < 0.05, "replay error {err}");
        }
    }

    #[test]
    fn reconstruct_cumulative_arc_matches_sum() {
        let path = curved_local_path(15, 0.03);
        let disps = DisplacementSequence::new(
            (0..16).map(|t| 0.3 + 0.05 * t as f64).collect(),
            LABEL_DT,
        );
        let traj = reconstruct_trajectory(&path, &disps);
        let last = traj.last().unwrap().1;
        let (s_back, d) = path.project(last.x, last.y);
        assert!(d < 1e-9);
        assert!((s_back - disps.total_future()).abs() < 1e-9);
    }

    #[test]
    fn huge_collision_weight_selects_clear_candidate_when_one_exists() {
        let (paths, disps) = default_anchor_sets();
        let frame = frame_with_agents(vec![parked(0, 14.0, 0.0)]);
        let target = straight_local_path(15, 0.0);
        let cfg = CostConfig {
            w_collision: 1e9,
            ..Default::default()
        };
        // single-path candidate set so hierarchical choice is score-driven
        let one_path = PathAnchorSet {
            anchors: vec![paths.anchors[0].clone()],
        };
        let mut cands = gen_candidates(&frame, &target, &one_path, &disps);
        collision_penalized_scores(&mut cands, &frame, &cfg);
        let clear_exists = cands.iter().any(|c| {
            rollout_overlap_steps(&c.path, &c.displacements.values, &frame, cfg.ego_dims()) == 0
        });
        assert!(clear_exists);
        let got = select_plan(&cands).unwrap();
        assert_eq!(
            rollout_overlap_steps(&got.path, &got.displacements.values, &frame, cfg.ego_dims()),
            0
        );
    }

    #[test]
    fn anchor_file_round_trips() {
        let (paths, disps) = default_anchor_sets();
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("anchors.json");
        save_anchors(&paths, &disps, &file).unwrap();
        let (p2, d2) = load_anchors(&file).unwrap();
        assert_eq!(p2, paths);
        assert_eq!(d2, disps);
    }

    #[test]
    fn displacement_anchor_construction() {
        let d = DisplacementAnchors::from_look_aheads(&LOOK_AHEADS, 15, LABEL_DT);
        assert_eq!(d.count(), 5);
        for (m, &l) in LOOK_AHEADS.iter().enumerate() {
            assert_eq!(d.base[m].len(), 16);
            for v in &d.base[m] {
                assert!((v - l * LABEL_DT).abs() < 1e-15);
            }
            // five steps of dt cover one second and reproduce the look-ahead
            let one_second: f64 = d.base[m][1..6].iter().sum();
            assert!((one_second - l).abs() < 1e-12);
            assert!((d.look_ahead(m) - l).abs() < 1e-12);
        }
    }

    #[test]
    fn ego_frame_round_trip() {
        let world = curved_local_path(10, 0.04);
        let pose = Pose2::new(3.0, -2.0, 0.7);
        let local = to_ego_frame(&world, &pose);
        let back = place_in_world(&local, &pose);
        for (a, b) in world.points().iter().zip(back.points()) {
            assert!((a.0 - b.0).abs() < 1e-9 && (a.1 - b.1).abs() < 1e-9);
        }
    }
}
