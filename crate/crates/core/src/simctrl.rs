//! Closed-loop micro-simulation: kinematic bicycle ego, steering and speed
//! PID controllers, scripted traffic agents, scenario files, and episode
//! metrics. Episodes are fully deterministic given a scenario and planner.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{boxes_overlap, interp_along, wrap_angle, OrientedBox, Polyline, Pose2};
use crate::planner::{CandidatePlan, PlannerError};
use crate::scene::{AgentCategory, AgentTrack, EgoRecord, Frame, MapLine, MapRole};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("ego has left the extended drive path")]
    PathExhausted,
    #[error(transparent)]
    Planner(#[from] PlannerError),
    #[error("scenario file error: {0}")]
    ScenarioFile(String),
}

/// Kinematic bicycle state. Speed is never negative; there is no reverse.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BicycleState {
    pub pose: Pose2,
    pub speed: f64,
    pub wheelbase: f64,
}

/// PID gains plus anti-windup and output clamping.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PIDGains {
    pub kp: f64,
    pub ki: f64,
    pub kd: f64,
    pub integral_limit: f64,
    pub output_limit: (f64, f64),
}

/// Mutable PID memory: integral accumulator and previous error.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PidState {
    pub integral: f64,
    pub prev_error: Option<f64>,
}

/// One PID update: returns the clamped command and the next state.
pub fn pid_step(gains: &PIDGains, state: &PidState, error: f64, dt: f64) -> (f64, PidState) {
    assert!(dt > 0.0, "dt must be positive");
    let integral = (state.integral + error * dt).clamp(-gains.integral_limit, gains.integral_limit);
    let derivative = match state.prev_error {
        Some(prev) => (error - prev) / dt,
        None => 0.0,
    };
    let raw = gains.kp * error + gains.ki * integral + gains.kd * derivative;
    let command = raw.clamp(gains.output_limit.0, gains.output_limit.1);
    (
        command,
        PidState {
            integral,
            prev_error: Some(error),
        },
    )
}

/// Look-ahead distance scheduling for the steering controller.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LookAhead {
    pub base: f64,
    pub speed_gain: f64,
}

impl LookAhead {
    pub fn at(&self, speed: f64) -> f64 {
        self.base + self.speed_gain * speed
    }
}

/// Steering command: heading error towards a look-ahead point on the path
/// (found by arc projection plus the scheduled look-ahead), fed through the
/// PID and clamped by its output limit.
pub fn lateral_control(
    ego: &BicycleState,
    path: &Polyline,
    gains: &PIDGains,
    state: &PidState,
    look_ahead: &LookAhead,
    dt: f64,
) -> Result<(f64, PidState), SimError> {
    let (s0, _) = path.project(ego.pose.x, ego.pose.y);
    if s0 >= path.total_length() {
        return Err(SimError::PathExhausted);
    }
    let target = interp_along(path, s0 + look_ahead.at(ego.speed))
        .expect("look-ahead arc is non-negative");
    let desired = (target.y - ego.pose.y).atan2(target.x - ego.pose.x);
    let error = wrap_angle(desired - ego.pose.heading);
    Ok(pid_step(gains, state, error, dt))
}

/// Acceleration command: desired speed is the first future displacement over
/// dt; the PID output maps to throttle (positive) or brake (negative).
pub fn longitudinal_control(
    ego: &BicycleState,
    disps: &crate::scene::DisplacementSequence,
    gains: &PIDGains,
    state: &PidState,
    dt: f64,
) -> (f64, PidState) {
    let desired = if disps.horizon() >= 1 {
        disps.values[1] / disps.dt
    } else {
        0.0
    };
    let error = desired - ego.speed;
    pid_step(gains, state, error, dt)
}

/// Kinematic bicycle update: position advances along the current heading,
/// the heading turns by v/L tan(steer) dt, and speed clamps at zero.
pub fn step_bicycle(state: &BicycleState, steer: f64, accel: f64, dt: f64) -> BicycleState {
    assert!(dt > 0.0, "dt must be positive");
    let v = state.speed;
    let x = state.pose.x + v * state.pose.heading.cos() * dt;
    let y = state.pose.y + v * state.pose.heading.sin() * dt;
    let heading = wrap_angle(state.pose.heading + v / state.wheelbase * steer.tan() * dt);
    BicycleState {
        pose: Pose2::new(x, y, heading),
        speed: (v + accel * dt).max(0.0),
        wheelbase: state.wheelbase,
    }
}

// ---------------------------------------------------------------------------
// scripted agents

/// Declarative agent behaviors for scenario construction.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", content = "params", rename_all = "snake_case")]
pub enum AgentSpec {
    /// Stationary box in the world frame.
    Parked { x: f64, y: f64, heading: f64, length: f64, width: f64 },
    /// Constant-velocity motion from a start pose, optionally delayed.
    Crossing {
        x: f64,
        y: f64,
        heading: f64,
        speed: f64,
        start_time: f64,
        length: f64,
        width: f64,
    },
    /// Drives the route in an adjacent lane, merges into the ego lane once
    /// the ego closes within the trigger gap, dwells slow, then speeds back
    /// up so the episode can resolve.
    CutIn {
        start_arc: f64,
        lane_offset: f64,
        speed: f64,
        trigger_gap: f64,
        merge_duration: f64,
        post_speed: f64,
        dwell: f64,
        exit_speed: f64,
    },
    /// Drives the ego lane ahead, brakes to a stop once the ego passes the
    /// trigger arc, holds, and accelerates back to its cruise speed.
    LeadBrake {
        start_arc: f64,
        speed: f64,
        trigger_ego_arc: f64,
        decel: f64,
        hold: f64,
    },
}

const VEHICLE_LENGTH: f64 = 4.5;
const VEHICLE_WIDTH: f64 = 2.0;

#[derive(Debug, Clone)]
enum ScriptState {
    Parked,
    Crossing,
    CutIn { arc: f64, merge_started: Option<f64> },
    LeadBrake {
        arc: f64,
        speed: f64,
        brake_started: Option<f64>,
        stopped_at: Option<f64>,
    },
}

/// Runtime wrapper around an AgentSpec: holds latched trigger state and
/// exposes script-based motion prediction.
#[derive(Debug, Clone)]
pub struct ScriptedAgent {
    pub id: u64,
    spec: AgentSpec,
    state: ScriptState,
}

const RESUME_ACCEL: f64 = 1.5;

fn cut_in_trigger_gap(spec: &AgentSpec) -> f64 {
    match spec {
        AgentSpec::CutIn { trigger_gap, .. } => *trigger_gap,
        _ => unreachable!(),
    }
}

/// Cut-in speed profile: cruise until the merge latches, blend down to the
/// post-merge crawl, dwell, then accelerate out.
fn cut_in_speed(spec: &AgentSpec, merge_started: Option<f64>, t: f64) -> f64 {
    let AgentSpec::CutIn {
        speed,
        merge_duration,
        post_speed,
        dwell,
        exit_speed,
        ..
    } = spec
    else {
        unreachable!()
    };
    match merge_started {
        None => *speed,
        Some(t0) => {
            let since = t - t0;
            if since <= *merge_duration {
                let frac = (since / merge_duration).clamp(0.0, 1.0);
                speed + (post_speed - speed) * frac
            } else if since <= merge_duration + dwell {
                *post_speed
            } else {
                (post_speed + RESUME_ACCEL * (since - merge_duration - dwell)).min(*exit_speed)
            }
        }
    }
}

/// Pose on the route at `arc`, shifted `offset` meters to the path's left.
fn lane_pose(route: &Polyline, arc: f64, offset: f64) -> Pose2 {
    let p = interp_along(route, arc.max(0.0)).expect("non-negative arc");
    let nx = -p.heading.sin();
    let ny = p.heading.cos();
    Pose2::new(p.x + nx * offset, p.y + ny * offset, p.heading)
}

impl ScriptedAgent {
    pub fn new(id: u64, spec: AgentSpec) -> Self {
        let state = match &spec {
            AgentSpec::Parked { .. } => ScriptState::Parked,
            AgentSpec::Crossing { .. } => ScriptState::Crossing,
            AgentSpec::CutIn { start_arc, .. } => ScriptState::CutIn {
                arc: *start_arc,
                merge_started: None,
            },
            AgentSpec::LeadBrake { start_arc, speed, .. } => ScriptState::LeadBrake {
                arc: *start_arc,
                speed: *speed,
                brake_started: None,
                stopped_at: None,
            },
        };
        Self { id, spec, state }
    }

    fn dims(&self) -> (f64, f64) {
        match &self.spec {
            AgentSpec::Parked { length, width, .. } => (*length, *width),
            AgentSpec::Crossing { length, width, .. } => (*length, *width),
            _ => (VEHICLE_LENGTH, VEHICLE_WIDTH),
        }
    }

    fn category(&self) -> AgentCategory {
        match &self.spec {
            AgentSpec::Crossing { length, .. } if *length < 1.5 => AgentCategory::Pedestrian,
            _ => AgentCategory::Vehicle,
        }
    }

    /// Current pose at simulation time `t`.
    pub fn pose_at(&self, t: f64, route: &Polyline) -> Pose2 {
        match (&self.spec, &self.state) {
            (AgentSpec::Parked { x, y, heading, .. }, _) => Pose2::new(*x, *y, *heading),
            (AgentSpec::Crossing { x, y, heading, speed, start_time, .. }, _) => {
                let travelled = speed * (t - start_time).max(0.0);
                Pose2::new(
                    x + heading.cos() * travelled,
                    y + heading.sin() * travelled,
                    *heading,
                )
            }
            (AgentSpec::CutIn { lane_offset, merge_duration, .. }, ScriptState::CutIn { arc, merge_started }) => {
                let offset = match merge_started {
                    None => *lane_offset,
                    Some(t0) => {
                        let frac = ((t - t0) / merge_duration).clamp(0.0, 1.0);
                        lane_offset * (1.0 - frac)
                    }
                };
                lane_pose(route, *arc, offset)
            }
            (AgentSpec::LeadBrake { .. }, ScriptState::LeadBrake { arc, .. }) => {
                lane_pose(route, *arc, 0.0)
            }
            _ => unreachable!("spec/state mismatch"),
        }
    }

    /// Advance the script by one simulation step, latching triggers from the
    /// ego's projected arc along the route.
    pub fn advance(&mut self, t: f64, dt: f64, ego_arc: f64) {
        let spec = self.spec.clone();
        match (&spec, &mut self.state) {
            (AgentSpec::CutIn { .. }, ScriptState::CutIn { arc, merge_started }) => {
                if merge_started.is_none() && *arc - ego_arc <= cut_in_trigger_gap(&spec) {
                    *merge_started = Some(t);
                }
                let v = cut_in_speed(&spec, *merge_started, t);
                *arc += v * dt;
            }
            (AgentSpec::LeadBrake { trigger_ego_arc, decel, hold, speed: cruise, .. },
             ScriptState::LeadBrake { arc, speed, brake_started, stopped_at }) => {
                if brake_started.is_none() && ego_arc >= *trigger_ego_arc {
                    *brake_started = Some(t);
                }
                if brake_started.is_some() {
                    match stopped_at {
                        None => {
                            *speed = (*speed - decel * dt).max(0.0);
                            if *speed == 0.0 {
                                *stopped_at = Some(t);
                            }
                        }
                        Some(t0) => {
                            if t - *t0 >= *hold {
                                *speed = (*speed + RESUME_ACCEL * dt).min(*cruise);
                            }
                        }
                    }
                }
                *arc += *speed * dt;
            }
            _ => {}
        }
    }

    /// Box footprint at time `t`.
    pub fn box_at(&self, t: f64, route: &Polyline) -> OrientedBox {
        let (l, w) = self.dims();
        OrientedBox::new(self.pose_at(t, route), l, w)
    }

    /// Project the script forward from its current latched state: triggered
    /// behaviors extrapolate exactly, untriggered ones assume no trigger.
    pub fn predict(&self, t: f64, horizon: usize, dt: f64, route: &Polyline) -> AgentTrack {
        let mut ghost = self.clone();
        let mut future = Vec::with_capacity(horizon);
        // freeze the trigger state: prediction advances with ego infinitely far
        for k in 1..=horizon {
            ghost.advance(t + (k - 1) as f64 * dt, dt, f64::NEG_INFINITY);
            future.push(ghost.pose_at(t + k as f64 * dt, route));
        }
        let (l, w) = self.dims();
        AgentTrack {
            id: self.id,
            category: self.category(),
            bbox: OrientedBox::new(self.pose_at(t, route), l, w),
            future,
            confidence: 0.9,
        }
    }
}

// ---------------------------------------------------------------------------
// scenarios

/// Declarative closed-loop setup: route, ego start, scripted agents, stop
/// lines (arc position and hold time), and the success criteria.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    pub route: Vec<[f64; 2]>,
    pub ego: ScenarioEgo,
    pub agents: Vec<AgentSpec>,
    pub stop_lines: Vec<(f64, f64)>,
    pub duration: f64,
    #[serde(default = "default_completion")]
    pub completion_fraction: f64,
}

fn default_completion() -> f64 {
    0.95
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ScenarioEgo {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
    pub speed: f64,
}

impl Scenario {
    pub fn route_polyline(&self) -> Result<Polyline, SimError> {
        Polyline::new(self.route.iter().map(|p| (p[0], p[1])).collect())
            .map_err(|e| SimError::ScenarioFile(e.to_string()))
    }

    pub fn save_list(scenarios: &[Scenario], path: &std::path::Path) -> Result<(), SimError> {
        let text = serde_json::to_string_pretty(scenarios)
            .map_err(|e| SimError::ScenarioFile(e.to_string()))?;
        std::fs::write(path, text + "\n").map_err(|e| SimError::ScenarioFile(e.to_string()))
    }

    pub fn load_list(path: &std::path::Path) -> Result<Vec<Scenario>, SimError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| SimError::ScenarioFile(e.to_string()))?;
        serde_json::from_str(&text).map_err(|e| SimError::ScenarioFile(e.to_string()))
    }
}

// ---------------------------------------------------------------------------
// episode runner

/// Simulation parameters independent of any single scenario.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub dt_sim: f64,
    pub replan_dt: f64,
    pub wheelbase: f64,
    pub ego_length: f64,
    pub ego_width: f64,
    pub horizon_t: usize,
    pub lateral: PIDGains,
    pub longitudinal: PIDGains,
    pub look_ahead: LookAhead,
    /// Interval at which contact is scanned (s); rounded to sim steps.
    pub collision_check_dt: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            dt_sim: 0.05,
            replan_dt: 0.2,
            wheelbase: 2.8,
            ego_length: 4.6,
            ego_width: 1.9,
            horizon_t: 15,
            lateral: PIDGains {
                kp: 1.4,
                ki: 0.0,
                kd: 0.12,
                integral_limit: 0.5,
                output_limit: (-0.6, 0.6),
            },
            longitudinal: PIDGains {
                kp: 1.8,
                ki: 0.4,
                kd: 0.0,
                integral_limit: 2.0,
                output_limit: (-6.0, 3.0),
            },
            look_ahead: LookAhead {
                base: 3.0,
                speed_gain: 0.35,
            },
            collision_check_dt: 0.05,
        }
    }
}

/// One recorded simulation step.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: f64,
    pub ego: ScenarioEgo,
    pub agents: Vec<AgentPose>,
    pub plan: PlanRecord,
    pub cmd: (f64, f64),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AgentPose {
    pub id: u64,
    pub x: f64,
    pub y: f64,
    pub heading: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PlanRecord {
    pub path: Vec<[f64; 2]>,
    pub disps: Vec<f64>,
    pub scores: (f64, f64),
}

/// Full rollout record of one episode.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpisodeLog {
    pub scenario: String,
    pub steps: Vec<StepRecord>,
    pub failure_reason: Option<String>,
}

impl EpisodeLog {
    /// Newline-JSON serialization, one step per line after a name header.
    pub fn write_jsonl<W: std::io::Write>(&self, w: &mut W) -> std::io::Result<()> {
        writeln!(
            w,
            "{}",
            serde_json::json!({"scenario": self.scenario, "failure": self.failure_reason})
        )?;
        for s in &self.steps {
            writeln!(w, "{}", serde_json::to_string(s).unwrap())?;
        }
        Ok(())
    }
}

/// Desk-scale episode outcome measures.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct EpisodeMetrics {
    pub success: bool,
    pub collided: bool,
    pub route_completion: f64,
    pub avg_speed: f64,
    pub comfort_proxy: f64,
}

/// Aggregate metrics over a suite of episodes.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SuiteMetrics {
    pub success_rate: f64,
    pub collision_rate: f64,
    pub mean_completion: f64,
    pub mean_avg_speed: f64,
    pub mean_comfort: f64,
}

pub fn compute_suite_metrics(episodes: &[EpisodeMetrics]) -> SuiteMetrics {
    let n = episodes.len().max(1) as f64;
    SuiteMetrics {
        success_rate: episodes.iter().filter(|e| e.success).count() as f64 / n,
        collision_rate: episodes.iter().filter(|e| e.collided).count() as f64 / n,
        mean_completion: episodes.iter().map(|e| e.route_completion).sum::<f64>() / n,
        mean_avg_speed: episodes.iter().map(|e| e.avg_speed).sum::<f64>() / n,
        mean_comfort: episodes.iter().map(|e| e.comfort_proxy).sum::<f64>() / n,
    }
}

struct StopLineState {
    arc: f64,
    hold: f64,
    arrived: Option<f64>,
    released: bool,
}

/// Run one closed-loop episode: replan at the label rate, track the selected
/// plan with both PID controllers at the sim rate, advance scripted agents,
/// and stop on collision, completion, or timeout.
///
/// Stop lines appear to the planner as zero-speed phantom agents during
/// their hold window; they are planning constructs and do not take part in
/// the physical collision scan.
pub fn run_episode(
    scenario: &Scenario,
    planner_fn: &mut dyn FnMut(&Frame) -> Result<CandidatePlan, PlannerError>,
    cfg: &SimConfig,
) -> Result<(EpisodeLog, EpisodeMetrics), SimError> {
    let route = scenario.route_polyline()?;
    let route_len = route.total_length();
    let mut ego = BicycleState {
        pose: Pose2::new(scenario.ego.x, scenario.ego.y, scenario.ego.heading),
        speed: scenario.ego.speed,
        wheelbase: cfg.wheelbase,
    };
    let mut agents: Vec<ScriptedAgent> = scenario
        .agents
        .iter()
        .enumerate()
        .map(|(i, s)| ScriptedAgent::new(i as u64, s.clone()))
        .collect();
    let mut stop_lines: Vec<StopLineState> = scenario
        .stop_lines
        .iter()
        .map(|&(arc, hold)| StopLineState {
            arc,
            hold,
            arrived: None,
            released: false,
        })
        .collect();

    let mut lat_state = PidState::default();
    let mut lon_state = PidState::default();
    let mut plan: Option<CandidatePlan> = None;
    let mut steps = Vec::new();
    let mut speeds = Vec::new();
    let mut collided = false;
    let mut failure_reason: Option<String> = None;
    let mut completion;

    let n_steps = (scenario.duration / cfg.dt_sim).round() as usize;
    let replan_every = (cfg.replan_dt / cfg.dt_sim).round().max(1.0) as usize;
    let collide_every = (cfg.collision_check_dt / cfg.dt_sim).round().max(1.0) as usize;
    let phantom_base_id = 10_000u64;

    let mut k = 0usize;
    loop {
        let t = k as f64 * cfg.dt_sim;
        let (ego_arc, _) = route.project(ego.pose.x, ego.pose.y);
        completion = (ego_arc / route_len).clamp(0.0, 1.0);
        if completion >= scenario.completion_fraction {
            break;
        }
        if k >= n_steps {
            failure_reason = Some("timeout".into());
            break;
        }

        // stop-line bookkeeping
        for sl in stop_lines.iter_mut() {
            if sl.released {
                continue;
            }
            match sl.arrived {
                None => {
                    if ego_arc <= sl.arc && sl.arc - ego_arc <= 8.0 && ego.speed <= 0.3 {
                        sl.arrived = Some(t);
                    }
                }
                Some(t0) => {
                    if t - t0 >= sl.hold {
                        sl.released = true;
                    }
                }
            }
        }

        // replan at the label rate
        if k % replan_every == 0 {
            let mut tracks: Vec<AgentTrack> = agents
                .iter()
                .map(|a| a.predict(t, cfg.horizon_t, cfg.replan_dt, &route))
                .collect();
            for (i, sl) in stop_lines.iter().filter(|s| !s.released).enumerate() {
                let pose = lane_pose(&route, sl.arc, 0.0);
                let bbox = OrientedBox::new(pose, 0.4, 3.2);
                tracks.push(AgentTrack {
                    id: phantom_base_id + i as u64,
                    category: AgentCategory::Vehicle,
                    bbox,
                    future: vec![pose; cfg.horizon_t],
                    confidence: 1.0,
                });
            }
            let map_lines: Vec<MapLine> = stop_lines
                .iter()
                .filter(|s| !s.released)
                .filter_map(|sl| {
                    let p = lane_pose(&route, sl.arc, 0.0);
                    let nx = -p.heading.sin();
                    let ny = p.heading.cos();
                    Polyline::new(vec![
                        (p.x - nx * 1.6, p.y - ny * 1.6),
                        (p.x + nx * 1.6, p.y + ny * 1.6),
                    ])
                    .ok()
                    .map(|line| MapLine {
                        role: MapRole::StopLine,
                        line,
                    })
                })
                .collect();
            let frame = Frame {
                timestamp: t,
                ego: EgoRecord {
                    pose: ego.pose,
                    speed: ego.speed,
                    future_trajectory: vec![],
                },
                agents: tracks,
                map_lines,
            };
            match planner_fn(&frame) {
                Ok(p) => plan = Some(p),
                Err(e) => {
                    failure_reason = Some(format!("planner: {e}"));
                    break;
                }
            }
        }
        let current = plan.as_ref().expect("plan exists after first replan");

        // controllers
        let (steer, new_lat) = match lateral_control(
            &ego,
            &current.path,
            &cfg.lateral,
            &lat_state,
            &cfg.look_ahead,
            cfg.dt_sim,
        ) {
            Ok(r) => r,
            Err(SimError::PathExhausted) => {
                failure_reason = Some("path exhausted".into());
                break;
            }
            Err(e) => return Err(e),
        };
        lat_state = new_lat;
        let (accel, new_lon) =
            longitudinal_control(&ego, &current.displacements, &cfg.longitudinal, &lon_state, cfg.dt_sim);
        lon_state = new_lon;

        steps.push(StepRecord {
            t,
            ego: ScenarioEgo {
                x: ego.pose.x,
                y: ego.pose.y,
                heading: ego.pose.heading,
                speed: ego.speed,
            },
            agents: agents
                .iter()
                .map(|a| {
                    let p = a.pose_at(t, &route);
                    AgentPose {
                        id: a.id,
                        x: p.x,
                        y: p.y,
                        heading: p.heading,
                    }
                })
                .collect(),
            plan: PlanRecord {
                path: current.path.points().iter().map(|&(x, y)| [x, y]).collect(),
                disps: current.displacements.values.clone(),
                scores: (current.path_score, current.long_score),
            },
            cmd: (steer, accel),
        });
        speeds.push(ego.speed);

        // dynamics
        ego = step_bicycle(&ego, steer, accel, cfg.dt_sim);
        for a in agents.iter_mut() {
            a.advance(t, cfg.dt_sim, ego_arc);
        }

        k += 1;

        // physical collision scan
        if k % collide_every == 0 {
            let t_next = k as f64 * cfg.dt_sim;
            let ego_box = OrientedBox::new(ego.pose, cfg.ego_length, cfg.ego_width);
            if agents
                .iter()
                .any(|a| boxes_overlap(&ego_box, &a.box_at(t_next, &route)))
            {
                collided = true;
                failure_reason = Some("collision".into());
                break;
            }
        }
    }

    let (final_arc, _) = route.project(ego.pose.x, ego.pose.y);
    completion = (final_arc / route_len).clamp(0.0, 1.0);
    let success = !collided && completion >= scenario.completion_fraction;
    let avg_speed = if speeds.is_empty() {
        0.0
    } else {
        speeds.iter().sum::<f64>() / speeds.len() as f64
    };
    let comfort_proxy = mean_abs_jerk(&speeds, cfg.dt_sim);

    Ok((
        EpisodeLog {
            scenario: scenario.name.clone(),
            steps,
            failure_reason,
        },
        EpisodeMetrics {
            success,
            collided,
            route_completion: completion,
            avg_speed,
            comfort_proxy,
        },
    ))
}

/// Mean |jerk| from finite-differenced speeds.
fn mean_abs_jerk(speeds: &[f64], dt: f64) -> f64 {
    if speeds.len() < 3 {
        return 0.0;
    }
    let accels: Vec<f64> = speeds.windows(2).map(|w| (w[1] - w[0]) / dt).collect();
    let jerks: Vec<f64> = accels.windows(2).map(|w| (w[1] - w[0]) / dt).collect();
    jerks.iter().map(|j| j.abs()).sum::<f64>() / jerks.len() as f64
}
