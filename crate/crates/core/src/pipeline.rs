//! End-to-end planning pipeline: candidate generation, longitudinal
//! refinement (deterministic cost descent or the trained regressor),
//! collision-penalized scoring, and hierarchical selection.
//!
//! The refinement and scoring can be conditioned either on each candidate's
//! own drive path (cascaded) or on a straight-ahead surrogate that ignores
//! the lateral plan (the parallel-planning baseline).

use crate::geometry::{interp_along, Polyline, Pose2};
use crate::learn::{candidate_features, forward, RegressorParams};
use crate::planner::{
    gen_candidates, refine_cost, refine_displacements, rollout_overlap_steps, select_plan,
    CandidatePlan, CostConfig, DisplacementAnchors, PathAnchorSet, PlannerError,
    REFINE_GRID_STEPS,
};
use crate::scene::{DisplacementSequence, Frame};

/// How candidate displacements are produced from their anchors.
#[derive(Debug, Clone)]
pub enum RefineMode {
    /// Exhaustive scaling-grid cost descent.
    CostDescent,
    /// Trained offset/score regressor.
    Learned(RegressorParams),
}

/// Which path the longitudinal stage sees while refining and scoring.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Conditioning {
    /// Each candidate's own drive path (cascaded planning).
    CandidatePath,
    /// A straight ray along the ego heading (path-unaware baseline).
    StraightAhead,
}

#[derive(Clone)]
pub struct PlannerPipeline {
    pub path_set: PathAnchorSet,
    pub disp_anchors: DisplacementAnchors,
    pub cost: CostConfig,
    pub mode: RefineMode,
    pub conditioning: Conditioning,
    pub path_points: usize,
}

impl PlannerPipeline {
    /// Straight-ahead surrogate path from the ego pose.
    fn straight_path(&self, ego: &Pose2) -> Polyline {
        let pts = (0..self.path_points.max(2))
            .map(|i| {
                let d = 2.0 * i as f64;
                (ego.x + d * ego.heading.cos(), ego.y + d * ego.heading.sin())
            })
            .collect();
        Polyline::new(pts).expect("straight ray is valid")
    }

    /// Plan one frame against a routing target path.
    pub fn plan(&self, frame: &Frame, target_path: &Polyline) -> Result<CandidatePlan, PlannerError> {
        let mut candidates =
            gen_candidates(frame, target_path, &self.path_set, &self.disp_anchors);
        let straight = self.straight_path(&frame.ego.pose);
        for cand in candidates.iter_mut() {
            let cond_path = match self.conditioning {
                Conditioning::CandidatePath => cand.path.clone(),
                Conditioning::StraightAhead => straight.clone(),
            };
            match &self.mode {
                RefineMode::CostDescent => {
                    let refined = refine_on_path(cand, &cond_path, frame, &self.cost);
                    cand.displacements = refined;
                    let progress: f64 = cand.displacements.values[1..].iter().sum();
                    let overlaps = rollout_overlap_steps(
                        &cond_path,
                        &cand.displacements.values,
                        frame,
                        self.cost.ego_dims(),
                    );
                    cand.long_score = self.cost.w_progress * progress
                        - self.cost.w_collision * overlaps as f64;
                }
                RefineMode::Learned(params) => {
                    let features = candidate_features(
                        &cond_path,
                        &cand.displacements.values,
                        frame,
                        self.cost.ego_dims(),
                        self.disp_anchors.look_ahead(cand.anchor_ids.1),
                    );
                    let (offsets, logit) =
                        forward(params, &features).map_err(|e| PlannerError::ClusterError(e.to_string()))?;
                    let values: Vec<f64> = cand
                        .displacements
                        .values
                        .iter()
                        .zip(&offsets)
                        .map(|(a, o)| (a + o).max(0.0))
                        .collect();
                    cand.displacements =
                        DisplacementSequence::new(values, cand.displacements.dt);
                    let overlaps = rollout_overlap_steps(
                        &cond_path,
                        &cand.displacements.values,
                        frame,
                        self.cost.ego_dims(),
                    );
                    cand.long_score = logit - self.cost.w_collision * overlaps as f64;
                }
            }
        }
        select_plan(&candidates).cloned()
    }
}

/// Deterministic refinement of a candidate's profile evaluated on an
/// arbitrary conditioning path (grid argmin, ties to the smallest scale).
pub fn refine_on_path(
    cand: &CandidatePlan,
    cond_path: &Polyline,
    frame: &Frame,
    cfg: &CostConfig,
) -> DisplacementSequence {
    if *cond_path == cand.path {
        return refine_displacements(cand, frame, cfg).displacements;
    }
    let base = &cand.displacements.values;
    let mut best_cost = f64::INFINITY;
    let mut best: Vec<f64> = base.clone();
    for i in 0..REFINE_GRID_STEPS {
        let lambda = i as f64 / 100.0;
        let values: Vec<f64> = base.iter().map(|v| (v * lambda).max(0.0)).collect();
        let cost = refine_cost(cond_path, &values, frame, cfg);
        if cost < best_cost {
            best_cost = cost;
            best = values;
        }
    }
    DisplacementSequence::new(best, cand.displacements.dt)
}

/// Routing target: the section of the route ahead of the ego, sampled at the
/// drive-path spacing (extrapolating past the route end when needed).
pub fn route_target_path(route: &Polyline, ego: &Pose2, path_points: usize) -> Polyline {
    let (s0, _) = route.project(ego.x, ego.y);
    let pts = (0..path_points.max(2))
        .map(|i| {
            let p = interp_along(route, s0 + 2.0 * i as f64).expect("non-negative arc");
            (p.x, p.y)
        })
        .collect();
    Polyline::new(pts).expect("route section is valid")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{AgentCategory, AgentTrack, EgoRecord, LABEL_DT};
    use crate::geometry::OrientedBox;

    fn anchor_sets() -> (PathAnchorSet, DisplacementAnchors) {
        let mk = |curv: f64| {
            let mut pts = Vec::with_capacity(15);
            let mut heading: f64 = 0.0;
            let mut pos = (0.0, 0.0);
            pts.push(pos);
            for _ in 1..15 {
                heading += curv * 2.0;
                pos = (pos.0 + 2.0 * heading.cos(), pos.1 + 2.0 * heading.sin());
                pts.push(pos);
            }
            Polyline::new(pts).unwrap()
        };
        let paths = vec![mk(0.0), mk(0.02), mk(-0.02), mk(0.045), mk(-0.045), mk(0.01)];
        (
            PathAnchorSet { anchors: paths },
            DisplacementAnchors::from_look_aheads(&[0.25, 1.7, 4.0, 6.0, 8.5], 15, LABEL_DT),
        )
    }

    fn frame_with(agents: Vec<AgentTrack>) -> Frame {
        Frame {
            timestamp: 0.0,
            ego: EgoRecord {
                pose: Pose2::new(0.0, 0.0, 0.0),
                speed: 5.0,
                future_trajectory: vec![],
            },
            agents,
            map_lines: vec![],
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

    #[test]
    fn cascaded_slows_for_agent_on_curved_route_while_baseline_does_not() {
        let (paths, disps) = anchor_sets();
        // target follows the strong left-curving anchor; park an agent on it
        let target = paths.anchors[3].clone();
        let on_curve = target.points()[7];
        let frame = frame_with(vec![parked(0, on_curve.0, on_curve.1)]);

        let cascade = PlannerPipeline {
            path_set: paths.clone(),
            disp_anchors: disps.clone(),
            cost: CostConfig::default(),
            mode: RefineMode::CostDescent,
            conditioning: Conditioning::CandidatePath,
            path_points: 15,
        };
        let baseline = PlannerPipeline {
            conditioning: Conditioning::StraightAhead,
            ..cascade.clone()
        };
        let plan_c = cascade.plan(&frame, &target).unwrap();
        let plan_a = baseline.plan(&frame, &target).unwrap();
        assert_eq!(plan_c.anchor_ids.0, 3);
        assert_eq!(plan_a.anchor_ids.0, 3);
        // the cascaded planner sees the conflict on its own path and holds
        // back; the straight-conditioned baseline charges ahead
        let reach_c = plan_c.displacements.total_future();
        let reach_a = plan_a.displacements.total_future();
        assert!(
            reach_c < reach_a - 2.0,
            "cascaded reach {reach_c}, baseline reach {reach_a}"
        );
    }

    #[test]
    fn empty_scene_selects_target_matching_path_at_full_stretch() {
        let (paths, disps) = anchor_sets();
        let target = paths.anchors[1].clone();
        let frame = frame_with(vec![]);
        let pipeline = PlannerPipeline {
            path_set: paths,
            disp_anchors: disps,
            cost: CostConfig::default(),
            mode: RefineMode::CostDescent,
            conditioning: Conditioning::CandidatePath,
            path_points: 15,
        };
        let plan = pipeline.plan(&frame, &target).unwrap();
        assert_eq!(plan.anchor_ids.0, 1);
        // unopposed progress: the fastest anchor at max scale wins
        assert_eq!(plan.anchor_ids.1, 4);
        let expect = 8.5 * LABEL_DT * 1.5 * 15.0;
        assert!((plan.displacements.total_future() - expect).abs() < 1e-9);
    }

    #[test]
    fn learned_mode_applies_offsets_and_clamps() {
        let (paths, disps) = anchor_sets();
        let frame = frame_with(vec![]);
        let target = paths.anchors[0].clone();
        let dim = crate::learn::feature_dim(15);
        // bias the offsets strongly negative: clamping must hold at zero
        let mut params = RegressorParams::zeros(dim, 4, 17);
        for b in params.b2.iter_mut().take(16) {
            *b = -10.0;
        }
        let pipeline = PlannerPipeline {
            path_set: paths,
            disp_anchors: disps,
            cost: CostConfig::default(),
            mode: RefineMode::Learned(params),
            conditioning: Conditioning::CandidatePath,
            path_points: 15,
        };
        let plan = pipeline.plan(&frame, &target).unwrap();
        assert!(plan.displacements.values.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn route_target_follows_route_from_projection() {
        let route = Polyline::new((0..40).map(|i| (i as f64 * 5.0, 0.0)).collect()).unwrap();
        let ego = Pose2::new(33.0, 2.0, 0.0);
        let target = route_target_path(&route, &ego, 15);
        assert_eq!(target.len(), 15);
        assert!((target.points()[0].0 - 33.0).abs() < 1e-9);
        assert!((target.points()[14].0 - 61.0).abs() < 1e-9);
        assert!(target.points().iter().all(|p| p.1.abs() < 1e-9));
    }
}
