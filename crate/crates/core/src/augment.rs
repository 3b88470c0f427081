//! Planning-oriented data augmentation: insert a virtual agent that either
//! threatens the ego's labeled rollout or passes clear of it, then rescale the
//! displacement labels so the rollout keeps a minimum clearance.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{interp_along, min_box_distance, OrientedBox, Pose2};
use crate::scene::{AgentCategory, AgentTrack, Frame, PlanLabels};

/// Footprint given to inserted virtual agents.
pub const VIRTUAL_AGENT_LENGTH: f64 = 4.5;
pub const VIRTUAL_AGENT_WIDTH: f64 = 2.0;

/// Half-width of the arrival-time window around the ego's own arrival at the
/// targeted waypoint that makes an insertion threatening.
pub const THREAT_WINDOW: f64 = 0.4;

const MAX_SAMPLE_ATTEMPTS: usize = 40;

#[derive(Debug, Error, PartialEq)]
pub enum AugmentError {
    #[error("no feasible virtual agent: {0}")]
    AugmentInfeasible(String),
    #[error("cannot relabel: original total displacement is zero")]
    RelabelDegenerate,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    /// Insertion probability per eligible frame.
    pub alpha: f64,
    /// Minimum ego displacement over 3 s for a frame to be eligible (m).
    pub delta: f64,
    /// Minimum clearance the relabeled rollout must keep (m).
    pub d_safe: f64,
    /// Start-distance interval for threatening agents (m).
    pub near_range: (f64, f64),
    /// Start-distance interval for non-threatening agents (m).
    pub far_range: (f64, f64),
    /// Arrival-time sampling interval (s).
    pub arrival_time_range: (f64, f64),
    /// Probability that an inserted agent is threatening.
    pub threat_prob: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            alpha: 0.1,
            delta: 3.0,
            d_safe: 1.0,
            near_range: (5.0, 12.0),
            far_range: (18.0, 35.0),
            arrival_time_range: (0.4, 3.0),
            threat_prob: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentRole {
    Threatening,
    NonThreatening,
    None,
}

/// Record of the decisions taken while augmenting one frame.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AugmentReport {
    pub inserted: bool,
    pub role: AgentRole,
    pub beta: f64,
    pub replaced_agent_id: Option<u64>,
    pub inserted_agent_id: Option<u64>,
}

impl AugmentReport {
    pub fn untouched() -> Self {
        Self {
            inserted: false,
            role: AgentRole::None,
            beta: 1.0,
            replaced_agent_id: None,
            inserted_agent_id: None,
        }
    }
}

/// Insertion gate: frames where the ego covers less than `delta` meters over
/// 3 s are never augmented; eligible frames are augmented with probability
/// `alpha`.
pub fn should_insert<R: Rng>(rng: &mut R, ego_displacement_3s: f64, cfg: &AugmentConfig) -> bool {
    if ego_displacement_3s < cfg.delta {
        return false;
    }
    cfg.alpha > 0.0 && rng.gen::<f64>() <= cfg.alpha
}

/// Ego box centered at the labeled rollout position for future step `t`.
fn ego_box_at(labels: &PlanLabels, t: usize, dims: (f64, f64)) -> OrientedBox {
    let s = labels.displacements.cumulative_at(t);
    let pose = interp_along(&labels.drive_path, s).expect("non-negative arc");
    OrientedBox::new(pose, dims.0, dims.1)
}

/// Time (s) at which the labeled rollout reaches arc `s_w`, interpolating
/// between steps; None if it never gets there within the horizon.
fn ego_arrival_time(labels: &PlanLabels, s_w: f64) -> Option<f64> {
    let dt = labels.displacements.dt;
    let mut cum = 0.0;
    for t in 1..=labels.displacements.horizon() {
        let step = labels.displacements.values[t];
        let next = cum + step;
        if next >= s_w {
            let frac = if step > 0.0 { (s_w - cum) / step } else { 0.0 };
            return Some(((t - 1) as f64 + frac) * dt);
        }
        cum = next;
    }
    None
}

/// Straight constant-velocity track from `start` towards `waypoint`,
/// arriving there at `t_arrival` and continuing past it.
fn build_track(
    id: u64,
    start: (f64, f64),
    waypoint: (f64, f64),
    t_arrival: f64,
    horizon: usize,
    dt: f64,
) -> AgentTrack {
    let dx = waypoint.0 - start.0;
    let dy = waypoint.1 - start.1;
    let dist = (dx * dx + dy * dy).sqrt();
    let heading = dy.atan2(dx);
    let speed = dist / t_arrival;
    let future = (1..=horizon)
        .map(|k| {
            let travelled = speed * dt * k as f64;
            Pose2::new(
                start.0 + heading.cos() * travelled,
                start.1 + heading.sin() * travelled,
                heading,
            )
        })
        .collect();
    AgentTrack {
        id,
        category: AgentCategory::Vehicle,
        bbox: OrientedBox::new(
            Pose2::new(start.0, start.1, heading),
            VIRTUAL_AGENT_LENGTH,
            VIRTUAL_AGENT_WIDTH,
        ),
        future,
        confidence: 1.0,
    }
}

/// Minimum clearance between the labeled ego rollout and an agent track over
/// future steps 1..=T.
fn min_rollout_clearance(labels: &PlanLabels, agent: &AgentTrack, ego_dims: (f64, f64)) -> f64 {
    let mut min_d = f64::INFINITY;
    for t in 1..=labels.displacements.horizon() {
        let d = min_box_distance(&ego_box_at(labels, t, ego_dims), &agent.box_at_step(t));
        min_d = min_d.min(d);
    }
    min_d
}

/// Sample a virtual agent of the requested role against the ego's labels.
///
/// Threatening agents start in `near_range` and are timed to reach a drive
/// path waypoint while the ego occupies it; their track is verified to break
/// the `d_safe` clearance against the unscaled rollout. Non-threatening
/// agents start in `far_range`, arrive outside the occupancy window, and are
/// verified to keep the clearance everywhere.
pub fn sample_virtual_agent<R: Rng>(
    rng: &mut R,
    role: AgentRole,
    ego_labels: &PlanLabels,
    ego_dims: (f64, f64),
    cfg: &AugmentConfig,
) -> Result<AgentTrack, AugmentError> {
    assert!(role != AgentRole::None, "role must be threatening or non-threatening");
    let path = &ego_labels.drive_path;
    if path.len() < 2 {
        return Err(AugmentError::AugmentInfeasible("drive path too short".into()));
    }
    let horizon = ego_labels.displacements.horizon();
    let dt = ego_labels.displacements.dt;
    let reach = ego_labels.displacements.total_future();
    if reach <= 0.0 {
        return Err(AugmentError::AugmentInfeasible("ego does not move".into()));
    }
    let ego_start = interp_along(path, 0.0).expect("valid path");
    let fresh_id = u64::MAX; // placeholder; insert_agent assigns the real id

    for _ in 0..MAX_SAMPLE_ATTEMPTS {
        // waypoint on the drive path within the ego's labeled reach
        let s_w = rng.gen::<f64>() * reach.min(path.total_length());
        let wp = interp_along(path, s_w).expect("arc in range");
        let t_w = match ego_arrival_time(ego_labels, s_w) {
            Some(t) => t,
            None => continue,
        };

        let range = match role {
            AgentRole::Threatening => cfg.near_range,
            _ => cfg.far_range,
        };
        let radius = range.0 + rng.gen::<f64>() * (range.1 - range.0);
        let angle = rng.gen::<f64>() * std::f64::consts::TAU;
        let start = (
            ego_start.x + radius * angle.cos(),
            ego_start.y + radius * angle.sin(),
        );

        let t_arrival = match role {
            AgentRole::Threatening => {
                let lo = (t_w - THREAT_WINDOW).max(dt);
                let hi = t_w + THREAT_WINDOW;
                lo + rng.gen::<f64>() * (hi - lo)
            }
            _ => {
                let (lo, hi) = cfg.arrival_time_range;
                let t = lo + rng.gen::<f64>() * (hi - lo);
                if (t - t_w).abs() <= THREAT_WINDOW {
                    continue; // inside the occupancy window; resample
                }
                t
            }
        };

        let track = build_track(fresh_id, start, (wp.x, wp.y), t_arrival, horizon, dt);

        // keep the scene sane: no contact with the ego at the current step
        let ego_now = OrientedBox::new(ego_start, ego_dims.0, ego_dims.1);
        if min_box_distance(&ego_now, &track.bbox) < cfg.d_safe {
            continue;
        }

        let clearance = min_rollout_clearance(ego_labels, &track, ego_dims);
        let ok = match role {
            AgentRole::Threatening => clearance < cfg.d_safe,
            _ => clearance >= cfg.d_safe,
        };
        if ok {
            return Ok(track);
        }
    }
    Err(AugmentError::AugmentInfeasible(format!(
        "no {role:?} sample found in {MAX_SAMPLE_ATTEMPTS} attempts"
    )))
}

/// Insert `agent` into the frame, assigning it a fresh id. A non-empty frame
/// is treated as at capacity: the agent with the lowest confidence (ties:
/// smallest id) is removed so the agent count stays unchanged.
pub fn insert_agent(frame: &Frame, agent: &AgentTrack) -> (Frame, Option<u64>, u64) {
    let mut out = frame.clone();
    let fresh_id = out.agents.iter().map(|a| a.id + 1).max().unwrap_or(0);
    let removed = if out.agents.is_empty() {
        None
    } else {
        let victim = out
            .agents
            .iter()
            .enumerate()
            .min_by(|(_, a), (_, b)| {
                a.confidence
                    .partial_cmp(&b.confidence)
                    .unwrap()
                    .then(a.id.cmp(&b.id))
            })
            .map(|(i, _)| i)
            .unwrap();
        let removed = out.agents.remove(victim);
        Some(removed.id)
    };
    let mut inserted = agent.clone();
    inserted.id = fresh_id;
    out.agents.push(inserted);
    (out, removed, fresh_id)
}

/// Largest cumulative displacement the ego can keep under its labels while
/// staying at least `d_safe` from the agent at every prefix step.
///
/// The scan walks future steps in order and stops at the first violation, so
/// the returned arc is the cumulative displacement of the last step of the
/// contiguously safe prefix: the whole scaled rollout stays clear.
pub fn safe_total_displacement(
    labels: &PlanLabels,
    agent: &AgentTrack,
    ego_dims: (f64, f64),
    d_safe: f64,
) -> f64 {
    let horizon = labels.displacements.horizon();
    let mut safe_cum = 0.0;
    for t in 1..=horizon {
        let ego_box = ego_box_at(labels, t, ego_dims);
        let d = min_box_distance(&ego_box, &agent.box_at_step(t));
        if d < d_safe {
            return safe_cum;
        }
        safe_cum = labels.displacements.cumulative_at(t);
    }
    safe_cum
}

/// Uniformly scale the future displacements so their sum becomes `d_safe_total`.
/// Returns the scaled labels and the scaling factor beta. The drive path and
/// the current-step value are untouched.
pub fn relabel_displacements(
    labels: &PlanLabels,
    d_safe_total: f64,
) -> Result<(PlanLabels, f64), AugmentError> {
    let d_orig = labels.displacements.total_future();
    if d_orig <= 0.0 {
        return Err(AugmentError::RelabelDegenerate);
    }
    debug_assert!((0.0..=d_orig + 1e-9).contains(&d_safe_total));
    let beta = (d_safe_total / d_orig).min(1.0);
    let mut out = labels.clone();
    for v in out.displacements.values.iter_mut().skip(1) {
        *v *= beta;
    }
    Ok((out, beta))
}

/// Full augmentation of one frame: gate, sample, insert, and relabel.
/// Infeasible sampling degrades to a no-op with `role = None`.
///
/// Scaling changes when the ego visits each arc, so a relabeled rollout is
/// re-verified against the agent track; samples whose scaled rollout still
/// breaks the clearance (e.g. a track that sweeps over the slowed ego) are
/// rejected and redrawn.
pub fn augment_frame<R: Rng>(
    frame: &Frame,
    labels: &PlanLabels,
    rng: &mut R,
    ego_dims: (f64, f64),
    cfg: &AugmentConfig,
) -> (Frame, PlanLabels, AugmentReport) {
    let steps_3s = ((3.0 / labels.displacements.dt).round() as usize).min(labels.displacements.horizon());
    let ego_displacement_3s = labels.displacements.cumulative_at(steps_3s);
    if !should_insert(rng, ego_displacement_3s, cfg) {
        return (frame.clone(), labels.clone(), AugmentReport::untouched());
    }
    let role = if rng.gen::<f64>() < cfg.threat_prob {
        AgentRole::Threatening
    } else {
        AgentRole::NonThreatening
    };
    for _ in 0..8 {
        let agent = match sample_virtual_agent(rng, role, labels, ego_dims, cfg) {
            Ok(a) => a,
            Err(AugmentError::AugmentInfeasible(_)) => {
                return (frame.clone(), labels.clone(), AugmentReport::untouched());
            }
            Err(e) => unreachable!("sample_virtual_agent cannot return {e:?}"),
        };
        let d_safe_total = safe_total_displacement(labels, &agent, ego_dims, cfg.d_safe);
        let (new_labels, beta) = match relabel_displacements(labels, d_safe_total) {
            Ok(r) => r,
            Err(AugmentError::RelabelDegenerate) => (labels.clone(), 1.0),
            Err(e) => unreachable!("relabel cannot return {e:?}"),
        };
        if min_rollout_clearance(&new_labels, &agent, ego_dims) < cfg.d_safe {
            continue;
        }
        let (new_frame, replaced, fresh_id) = insert_agent(frame, &agent);
        return (
            new_frame,
            new_labels,
            AugmentReport {
                inserted: true,
                role,
                beta,
                replaced_agent_id: replaced,
                inserted_agent_id: Some(fresh_id),
            },
        );
    }
    (frame.clone(), labels.clone(), AugmentReport::untouched())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Polyline;
    use crate::scene::{DisplacementSequence, EgoRecord, LABEL_DT};
    use proptest::prelude::*;
    use rand::rngs::StdRng;
    use rand::SeedableRng;

    const EGO_DIMS: (f64, f64) = (4.6, 1.9);

    fn straight_labels(step: f64, horizon: usize) -> PlanLabels {
        let length = (step * horizon as f64 + 10.0).max(30.0);
        let n = (length / 2.0).ceil() as usize + 1;
        let pts = (0..n).map(|i| (2.0 * i as f64, 0.0)).collect();
        let mut values = vec![step; horizon + 1];
        values[0] = step;
        PlanLabels {
            drive_path: Polyline::new(pts).unwrap(),
            displacements: DisplacementSequence::new(values, LABEL_DT),
            extended: false,
        }
    }

    fn empty_frame() -> Frame {
        Frame {
            timestamp: 0.0,
            ego: EgoRecord {
                pose: crate::geometry::Pose2::new(0.0, 0.0, 0.0),
                speed: 5.0,
                future_trajectory: vec![],
            },
            agents: vec![],
            map_lines: vec![],
        }
    }

    fn parked_agent(id: u64, x: f64, y: f64, confidence: f64) -> AgentTrack {
        let pose = crate::geometry::Pose2::new(x, y, 0.0);
        AgentTrack {
            id,
            category: AgentCategory::Vehicle,
            bbox: OrientedBox::new(pose, 4.5, 2.0),
            future: vec![pose; 15],
            confidence,
        }
    }

    #[test]
    fn gate_blocks_slow_ego() {
        let cfg = AugmentConfig { delta: 1.0, alpha: 1.0, ..Default::default() };
        let mut rng = StdRng::seed_from_u64(1);
        for _ in 0..100 {
            assert!(!should_insert(&mut rng, 0.1, &cfg));
        }
    }

    #[test]
    fn gate_alpha_zero_never_inserts() {
        let cfg = AugmentConfig { alpha: 0.0, ..Default::default() };
        let mut rng = StdRng::seed_from_u64(2);
        for _ in 0..100 {
            assert!(!should_insert(&mut rng, 100.0, &cfg));
        }
    }

    #[test]
    fn gate_monte_carlo_rate() {
        let cfg = AugmentConfig { alpha: 0.1, delta: 1.0, ..Default::default() };
        let mut rng = StdRng::seed_from_u64(3);
        let n = 100_000;
        let hits = (0..n).filter(|_| should_insert(&mut rng, 10.0, &cfg)).count();
        let frac = hits as f64 / n as f64;
        assert!((frac - 0.1).abs() < 0.005, "fraction {frac}");
    }

    #[test]
    fn threatening_agent_conflicts_with_rollout() {
        let labels = straight_labels(1.0, 15); // 5 m/s
        let cfg = AugmentConfig::default();
        let mut rng = StdRng::seed_from_u64(10);
        for _ in 0..20 {
            let a =
                sample_virtual_agent(&mut rng, AgentRole::Threatening, &labels, EGO_DIMS, &cfg)
                    .unwrap();
            let clearance = min_rollout_clearance(&labels, &a, EGO_DIMS);
            assert!(clearance < cfg.d_safe, "clearance {clearance}");
        }
    }

    #[test]
    fn non_threatening_agent_stays_clear() {
        let labels = straight_labels(1.0, 15);
        let cfg = AugmentConfig::default();
        let mut rng = StdRng::seed_from_u64(11);
        for _ in 0..20 {
            let a = sample_virtual_agent(
                &mut rng,
                AgentRole::NonThreatening,
                &labels,
                EGO_DIMS,
                &cfg,
            )
            .unwrap();
            let clearance = min_rollout_clearance(&labels, &a, EGO_DIMS);
            assert!(clearance >= cfg.d_safe, "clearance {clearance}");
        }
    }

    #[test]
    fn virtual_agent_speed_constant() {
        let labels = straight_labels(1.2, 15);
        let cfg = AugmentConfig::default();
        let mut rng = StdRng::seed_from_u64(12);
        let a = sample_virtual_agent(&mut rng, AgentRole::Threatening, &labels, EGO_DIMS, &cfg)
            .unwrap();
        let mut prev = (a.bbox.center.x, a.bbox.center.y);
        let mut step0 = None;
        for p in &a.future {
            let d = ((p.x - prev.0).powi(2) + (p.y - prev.1).powi(2)).sqrt();
            match step0 {
                None => step0 = Some(d),
                Some(s) => assert!((d - s).abs() < 1e-9),
            }
            prev = (p.x, p.y);
        }
    }

    #[test]
    fn insert_removes_lowest_confidence() {
        let mut frame = empty_frame();
        frame.agents = vec![
            parked_agent(0, 50.0, 50.0, 0.9),
            parked_agent(1, 60.0, 50.0, 0.3),
            parked_agent(2, 70.0, 50.0, 0.7),
        ];
        let virt = parked_agent(99, -20.0, 0.0, 1.0);
        let (out, removed, fresh) = insert_agent(&frame, &virt);
        assert_eq!(removed, Some(1));
        assert_eq!(out.agents.len(), 3);
        assert_eq!(fresh, 3);
        assert!(out.agents.iter().any(|a| a.id == 3));
    }

    #[test]
    fn insert_into_empty_frame_appends() {
        let frame = empty_frame();
        let virt = parked_agent(99, -20.0, 0.0, 1.0);
        let (out, removed, fresh) = insert_agent(&frame, &virt);
        assert_eq!(removed, None);
        assert_eq!(out.agents.len(), 1);
        assert_eq!(fresh, 0);
    }

    #[test]
    fn insert_tie_breaks_on_smaller_id() {
        let mut frame = empty_frame();
        frame.agents = vec![
            parked_agent(5, 50.0, 50.0, 0.3),
            parked_agent(2, 60.0, 50.0, 0.3),
        ];
        let virt = parked_agent(99, -20.0, 0.0, 1.0);
        let (_, removed, _) = insert_agent(&frame, &virt);
        assert_eq!(removed, Some(2));
    }

    #[test]
    fn vacuously_safe_when_agent_far() {
        let labels = straight_labels(1.0, 15);
        let agent = parked_agent(0, 100.0, 100.0, 0.5);
        let d = safe_total_displacement(&labels, &agent, EGO_DIMS, 1.0);
        assert!((d - labels.displacements.total_future()).abs() < 1e-12);
    }

    #[test]
    fn parked_agent_on_path_limits_displacement() {
        // ego box front is at cum + length/2; agent rear is at 8 - 2.25
        let labels = straight_labels(1.0, 15);
        let agent = parked_agent(0, 8.0, 0.0, 0.5);
        let d_safe = 1.0;
        let got = safe_total_displacement(&labels, &agent, EGO_DIMS, d_safe);
        // exhaustive per-step scan oracle
        let mut oracle = 0.0;
        for t in 1..=15 {
            let cum = t as f64 * 1.0;
            let ego = OrientedBox::new(
                interp_along(&labels.drive_path, cum).unwrap(),
                EGO_DIMS.0,
                EGO_DIMS.1,
            );
            if min_box_distance(&ego, &agent.bbox) < d_safe {
                break;
            }
            oracle = cum;
        }
        assert_eq!(got, oracle);
        // gap closes when front (cum + 2.3) + 1.0 reaches rear (5.75): cum >= 2.45
        assert!((got - 2.0).abs() < 1e-12);
    }

    #[test]
    fn crossing_agent_limits_to_prefix() {
        // agent crosses the path only around step 7
        let labels = straight_labels(1.0, 15);
        let mut future = Vec::new();
        for t in 1..=15 {
            let y = if t == 7 { 0.0 } else { 30.0 };
            future.push(crate::geometry::Pose2::new(7.0, y, -std::f64::consts::FRAC_PI_2));
        }
        let agent = AgentTrack {
            id: 0,
            category: AgentCategory::Vehicle,
            bbox: OrientedBox::new(crate::geometry::Pose2::new(7.0, 30.0, 0.0), 4.5, 2.0),
            future,
            confidence: 0.5,
        };
        let got = safe_total_displacement(&labels, &agent, EGO_DIMS, 1.0);
        assert!((got - 6.0).abs() < 1e-12);
    }

    #[test]
    fn relabel_halves_displacements() {
        let labels = straight_labels(1.0, 10); // D_orig = 10
        let (out, beta) = relabel_displacements(&labels, 5.0).unwrap();
        assert!((beta - 0.5).abs() < 1e-15);
        assert!((out.displacements.total_future() - 5.0).abs() < 1e-12);
        for v in &out.displacements.values[1..] {
            assert!((v - 0.5).abs() < 1e-15);
        }
        assert_eq!(out.displacements.values[0], labels.displacements.values[0]);
        assert_eq!(out.drive_path, labels.drive_path);
    }

    #[test]
    fn relabel_identity_when_fully_safe() {
        let labels = straight_labels(0.8, 15);
        let d_orig = labels.displacements.total_future();
        let (out, beta) = relabel_displacements(&labels, d_orig).unwrap();
        assert_eq!(beta, 1.0);
        assert_eq!(out, labels);
    }

    #[test]
    fn relabel_zero_motion_degenerate() {
        let mut labels = straight_labels(1.0, 15);
        for v in labels.displacements.values.iter_mut() {
            *v = 0.0;
        }
        assert_eq!(
            relabel_displacements(&labels, 0.0),
            Err(AugmentError::RelabelDegenerate)
        );
    }

    #[test]
    fn relabel_reaches_fixed_point() {
        let labels = straight_labels(1.0, 15);
        let cfg = AugmentConfig::default();
        let mut rng = StdRng::seed_from_u64(21);
        let agent = sample_virtual_agent(&mut rng, AgentRole::Threatening, &labels, EGO_DIMS, &cfg)
            .unwrap();
        let d_safe_total = safe_total_displacement(&labels, &agent, EGO_DIMS, cfg.d_safe);
        let (new_labels, _) = relabel_displacements(&labels, d_safe_total).unwrap();
        if new_labels.displacements.total_future() > 0.0 {
            let again = safe_total_displacement(&new_labels, &agent, EGO_DIMS, cfg.d_safe);
            assert!((again - new_labels.displacements.total_future()).abs() < 1e-9);
        }
    }

    #[test]
    fn augment_identity_when_alpha_zero() {
        let labels = straight_labels(1.0, 15);
        let frame = empty_frame();
        let cfg = AugmentConfig { alpha: 0.0, ..Default::default() };
        let mut rng = StdRng::seed_from_u64(30);
        let (f, l, r) = augment_frame(&frame, &labels, &mut rng, EGO_DIMS, &cfg);
        assert_eq!(f, frame);
        assert_eq!(l, labels);
        assert!(!r.inserted);
        assert_eq!(r.role, AgentRole::None);
    }

    #[test]
    fn augment_deterministic_replay() {
        let labels = straight_labels(1.0, 15);
        let mut frame = empty_frame();
        frame.agents = vec![parked_agent(0, 60.0, 60.0, 0.4)];
        let cfg = AugmentConfig { alpha: 1.0, threat_prob: 1.0, ..Default::default() };
        let run = |seed: u64| {
            let mut rng = StdRng::seed_from_u64(seed);
            augment_frame(&frame, &labels, &mut rng, EGO_DIMS, &cfg)
        };
        let (f1, l1, r1) = run(77);
        let (f2, l2, r2) = run(77);
        assert_eq!(f1, f2);
        assert_eq!(l1, l2);
        assert_eq!(r1.beta, r2.beta);
        assert_eq!(r1.role, AgentRole::Threatening);
        assert!(r1.inserted);
    }

    #[test]
    fn augmented_frames_respect_d_safe_after_relabel() {
        let cfg = AugmentConfig { alpha: 1.0, ..Default::default() };
        let mut rng = StdRng::seed_from_u64(40);
        let mut inserted = 0;
        for k in 0..500 {
            let step = 0.5 + (k % 10) as f64 * 0.12;
            let labels = straight_labels(step, 15);
            let frame = empty_frame();
            let (f, l, r) = augment_frame(&frame, &labels, &mut rng, EGO_DIMS, &cfg);
            if !r.inserted {
                continue;
            }
            inserted += 1;
            let agent = f
                .agents
                .iter()
                .find(|a| Some(a.id) == r.inserted_agent_id)
                .unwrap();
            let clearance = min_rollout_clearance(&l, agent, EGO_DIMS);
            // steps that no longer advance (beta shrunk) may sit exactly at
            // the prefix boundary; clearance must never drop below d_safe
            assert!(
                clearance >= cfg.d_safe - 1e-9,
                "violation: clearance {clearance} beta {}",
                r.beta
            );
            if r.role == AgentRole::NonThreatening {
                assert_eq!(r.beta, 1.0);
            }
        }
        assert!(inserted > 300, "only {inserted} insertions");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn prop_relabel_preserves_profile_shape(seed in 0u64..1000, frac in 0.0f64..1.0) {
            let mut rng = StdRng::seed_from_u64(seed);
            let values: Vec<f64> = (0..16).map(|_| rand::Rng::gen::<f64>(&mut rng) * 2.0).collect();
            let labels = PlanLabels {
                drive_path: Polyline::new(vec![(0.0, 0.0), (40.0, 0.0)]).unwrap(),
                displacements: DisplacementSequence::new(values, LABEL_DT),
                extended: false,
            };
            let d_orig = labels.displacements.total_future();
            prop_assume!(d_orig > 1e-6);
            let (out, beta) = relabel_displacements(&labels, frac * d_orig).unwrap();
            prop_assert!((out.displacements.total_future() - beta * d_orig).abs() < 1e-9);
            for t in 1..16 {
                for s in 1..16 {
                    let orig_s = labels.displacements.values[s];
                    if orig_s > 1e-9 {
                        let ratio_new = out.displacements.values[t] / out.displacements.values[s];
                        let ratio_old = labels.displacements.values[t] / orig_s;
                        prop_assert!((ratio_new - ratio_old).abs() < 1e-12);
                    }
                }
            }
            prop_assert_eq!(&out.drive_path, &labels.drive_path);
        }

        #[test]
        fn prop_safe_displacement_monotone_in_d_safe(seed in 0u64..500, d1 in 0.2f64..2.0, d2 in 0.2f64..2.0) {
            let mut rng = StdRng::seed_from_u64(seed);
            let labels = straight_labels(1.0, 15);
            let x = rand::Rng::gen::<f64>(&mut rng) * 20.0;
            let y = (rand::Rng::gen::<f64>(&mut rng) - 0.5) * 6.0;
            let agent = parked_agent(0, x, y, 0.5);
            let (lo, hi) = if d1 <= d2 { (d1, d2) } else { (d2, d1) };
            let s_lo = safe_total_displacement(&labels, &agent, EGO_DIMS, lo);
            let s_hi = safe_total_displacement(&labels, &agent, EGO_DIMS, hi);
            prop_assert!(s_hi <= s_lo + 1e-12);
        }
    }
}
