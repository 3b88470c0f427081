//! Ablation benchmark protocol: build a scripted training corpus, fit the
//! offset regressor with and without augmentation, and evaluate the variant
//! matrix (path-unaware baseline, cascaded, cascaded + augmentation) on a
//! shared scenario suite with fixed seeds.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::augment::augment_frame;
use crate::config::Config;
use crate::geometry::{min_box_distance, OrientedBox, Polyline};
use crate::learn::{
    build_training_sample, feature_dim, train, LossWeights, RegressorParams, TrainSample,
};
use crate::pipeline::{route_target_path, Conditioning, PlannerPipeline, RefineMode};
use crate::planner::{cluster_path_anchors, to_ego_frame, DisplacementAnchors, PathAnchorSet};
use crate::scene::{derive_labels, EgoRecord, Frame, PlanLabels};
use crate::simctrl::{
    compute_suite_metrics, run_episode, AgentSpec, EpisodeLog, EpisodeMetrics, Scenario,
    ScenarioEgo, ScriptedAgent, SimConfig, SuiteMetrics,
};

pub const FAMILIES: [&str; 4] = ["cut_in", "crossing", "lead_brake", "merge"];

/// One evaluated episode of one variant.
#[derive(Debug, Clone)]
pub struct BenchRow {
    pub variant: String,
    pub scenario: String,
    pub seed: u64,
    pub metrics: EpisodeMetrics,
}

#[derive(Debug, Clone)]
pub struct VariantSummary {
    pub name: String,
    pub alpha: f64,
    pub metrics: SuiteMetrics,
}

/// Time series for plotting: (t, ego speed, min agent distance).
#[derive(Debug, Clone)]
pub struct PlotSeries {
    pub variant: String,
    pub scenario: String,
    pub points: Vec<(f64, f64, f64)>,
}

#[derive(Debug)]
pub struct BenchResult {
    pub rows: Vec<BenchRow>,
    pub summaries: Vec<VariantSummary>,
    pub plots: Vec<PlotSeries>,
}

// ---------------------------------------------------------------------------
// route and scenario generation

/// Straight - arc - straight route sampled every ~2.5 m. The arc is where
/// scenario conflicts live, so the lateral plan matters there.
fn gen_route<R: Rng>(rng: &mut R) -> (Vec<[f64; 2]>, f64, f64) {
    let straight1 = 25.0 + rng.gen::<f64>() * 15.0;
    let radius = 25.0 + rng.gen::<f64>() * 20.0;
    let turn = (0.7 + rng.gen::<f64>() * 0.8) * if rng.gen::<bool>() { 1.0 } else { -1.0 };
    let straight2 = 45.0 + rng.gen::<f64>() * 25.0;
    let arc_len = radius * turn.abs();

    let mut pts: Vec<[f64; 2]> = Vec::new();
    let step = 2.5;
    let mut s = 0.0;
    let total = straight1 + arc_len + straight2;
    let sign = turn.signum();
    while s <= total + 1e-9 {
        let p = if s <= straight1 {
            [s, 0.0]
        } else if s <= straight1 + arc_len {
            let a = (s - straight1) / radius;
            [straight1 + radius * a.sin(), sign * radius * (1.0 - a.cos())]
        } else {
            let a = turn.abs();
            let rest = s - straight1 - arc_len;
            [
                straight1 + radius * a.sin() + rest * a.cos(),
                sign * (radius * (1.0 - a.cos()) + rest * a.sin()),
            ]
        };
        pts.push(p);
        s += step;
    }
    (pts, straight1, arc_len)
}

fn uniform<R: Rng>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    lo + rng.gen::<f64>() * (hi - lo)
}

/// Perpendicular crosser aimed at a route arc position, timed to reach it at
/// `t_hit` seconds.
fn crossing_spec<R: Rng>(
    rng: &mut R,
    route: &Polyline,
    conflict_arc: f64,
    t_hit: f64,
    speed: f64,
    dims: (f64, f64),
) -> AgentSpec {
    let p = crate::geometry::interp_along(route, conflict_arc).expect("arc in range");
    let side = if rng.gen::<bool>() { 1.0 } else { -1.0 };
    let approach = p.heading + side * std::f64::consts::FRAC_PI_2;
    let dist = speed * t_hit.max(0.5);
    AgentSpec::Crossing {
        x: p.x + approach.cos() * dist,
        y: p.y + approach.sin() * dist,
        heading: crate::geometry::wrap_angle(approach + std::f64::consts::PI),
        speed,
        start_time: 0.0,
        length: dims.0,
        width: dims.1,
    }
}

/// Build one eval scenario of the given family under a seeded rng.
fn eval_scenario(family: &str, index: usize, seed: u64) -> Scenario {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1_000_000 + index as u64);
    let (route_pts, straight1, arc_len) = gen_route(&mut rng);
    let route = Polyline::new(route_pts.iter().map(|p| (p[0], p[1])).collect()).unwrap();
    let cruise = uniform(&mut rng, 5.5, 7.0);
    let conflict_arc = straight1 + uniform(&mut rng, 0.25, 0.85) * arc_len;

    let agents = match family {
        "cut_in" => {
            vec![AgentSpec::CutIn {
                start_arc: uniform(&mut rng, 18.0, 28.0),
                lane_offset: 3.5 * if rng.gen::<bool>() { 1.0 } else { -1.0 },
                speed: uniform(&mut rng, 2.5, 4.0),
                trigger_gap: uniform(&mut rng, 14.0, 20.0),
                merge_duration: uniform(&mut rng, 1.2, 2.0),
                post_speed: uniform(&mut rng, 1.5, 2.5),
                dwell: uniform(&mut rng, 2.0, 4.0),
                exit_speed: uniform(&mut rng, 5.0, 7.0),
            }]
        }
        "crossing" => {
            let speed = uniform(&mut rng, 1.2, 2.8);
            let t_hit = conflict_arc / cruise + uniform(&mut rng, -0.5, 0.5);
            vec![crossing_spec(&mut rng, &route, conflict_arc, t_hit, speed, (0.7, 0.7))]
        }
        "lead_brake" => {
            vec![AgentSpec::LeadBrake {
                start_arc: uniform(&mut rng, 14.0, 22.0),
                speed: cruise + uniform(&mut rng, -0.5, 0.5),
                trigger_ego_arc: straight1 + uniform(&mut rng, 0.0, arc_len * 0.5),
                decel: uniform(&mut rng, 4.5, 6.0),
                hold: uniform(&mut rng, 1.5, 3.0),
            }]
        }
        "merge" => {
            let v1 = uniform(&mut rng, 3.5, 5.5);
            let t1 = conflict_arc / cruise + uniform(&mut rng, -0.4, 0.4);
            let first = crossing_spec(&mut rng, &route, conflict_arc, t1, v1, (4.5, 2.0));
            let v2 = uniform(&mut rng, 3.5, 5.5);
            let t2 = t1 + uniform(&mut rng, 3.0, 5.0);
            let second = crossing_spec(&mut rng, &route, conflict_arc, t2, v2, (4.5, 2.0));
            vec![first, second]
        }
        other => panic!("unknown family {other}"),
    };

    Scenario {
        name: format!("{family}_{index:03}"),
        route: route_pts,
        ego: ScenarioEgo {
            x: 0.0,
            y: 0.0,
            heading: 0.0,
            speed: cruise,
        },
        agents,
        stop_lines: vec![],
        duration: 75.0,
        completion_fraction: 0.95,
    }
}

/// The fixed-seed eval suite: `per_family` scenarios for each family.
pub fn build_eval_suite(per_family: usize, seed: u64) -> Vec<(Scenario, u64)> {
    let mut out = Vec::with_capacity(per_family * FAMILIES.len());
    for (fi, family) in FAMILIES.iter().enumerate() {
        for i in 0..per_family {
            let episode_seed = seed
                .wrapping_mul(1_000_003)
                .wrapping_add((fi * 100_000 + i) as u64);
            out.push((eval_scenario(family, i, episode_seed), episode_seed));
        }
    }
    out
}

// ---------------------------------------------------------------------------
// training corpus

/// Benign training scenario: traffic is present but timed or placed so the
/// cruising ego never needs to slow down.
fn train_scenario(index: usize, seed: u64) -> Scenario {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(2_000_000 + index as u64);
    let (route_pts, straight1, arc_len) = gen_route(&mut rng);
    let route = Polyline::new(route_pts.iter().map(|p| (p[0], p[1])).collect()).unwrap();
    let cruise = uniform(&mut rng, 4.0, 8.5);
    let conflict_arc = straight1 + uniform(&mut rng, 0.2, 0.8) * arc_len;

    let mut agents = Vec::new();
    match index % 5 {
        0 => {} // empty road
        1 => {
            // crosser that clears the route well before or after the ego
            let speed = uniform(&mut rng, 1.0, 2.5);
            let miss = uniform(&mut rng, 3.5, 6.0) * if rng.gen::<bool>() { 1.0 } else { -1.0 };
            let t_hit = (conflict_arc / cruise + miss).max(1.0);
            agents.push(crossing_spec(&mut rng, &route, conflict_arc, t_hit, speed, (0.7, 0.7)));
        }
        2 => {
            // distant lead cruising at matching speed
            agents.push(AgentSpec::LeadBrake {
                start_arc: uniform(&mut rng, 40.0, 60.0),
                speed: cruise + uniform(&mut rng, 0.0, 1.0),
                trigger_ego_arc: 1e9,
                decel: 4.0,
                hold: 1.0,
            });
        }
        3 => {
            // early merger far ahead at matching speed
            agents.push(AgentSpec::CutIn {
                start_arc: uniform(&mut rng, 45.0, 60.0),
                lane_offset: 3.5,
                speed: cruise,
                trigger_gap: 100.0,
                merge_duration: uniform(&mut rng, 1.5, 2.5),
                post_speed: cruise,
                dwell: 1.0,
                exit_speed: cruise,
            });
        }
        _ => {
            // parked clutter off the lane
            for k in 0..2 {
                let arc = uniform(&mut rng, 20.0, route.total_length() - 20.0);
                let p = crate::geometry::interp_along(&route, arc).unwrap();
                let side = if (index + k) % 2 == 0 { 1.0 } else { -1.0 };
                let off = side * uniform(&mut rng, 4.0, 7.0);
                agents.push(AgentSpec::Parked {
                    x: p.x - p.heading.sin() * off,
                    y: p.y + p.heading.cos() * off,
                    heading: p.heading,
                    length: 4.5,
                    width: 2.0,
                });
            }
        }
    }

    Scenario {
        name: format!("train_{index:03}"),
        route: route_pts,
        ego: ScenarioEgo {
            x: 0.0,
            y: 0.0,
            heading: 0.0,
            speed: cruise,
        },
        agents,
        stop_lines: vec![],
        duration: 40.0,
        completion_fraction: 0.95,
    }
}

/// Roll a scripted constant-speed ego down the scenario route and snapshot
/// labeled frames at the label rate (decimated by `stride`).
fn scripted_frames(
    scenario: &Scenario,
    cfg: &Config,
    stride: usize,
) -> Vec<(Frame, PlanLabels)> {
    let route = scenario.route_polyline().expect("valid route");
    let cruise = scenario.ego.speed;
    let dt_sim = cfg.sim.dt_sim;
    let label_every = (0.2 / dt_sim).round() as usize * stride.max(1);
    let horizon_s = cfg.horizon_t as f64 * 0.2;
    let mut agents: Vec<ScriptedAgent> = scenario
        .agents
        .iter()
        .enumerate()
        .map(|(i, s)| ScriptedAgent::new(i as u64, s.clone()))
        .collect();

    let mut out = Vec::new();
    let n_steps = (scenario.duration / dt_sim) as usize;
    for k in 0..n_steps {
        let t = k as f64 * dt_sim;
        let ego_arc = cruise * t;
        if ego_arc + cruise * (horizon_s + 0.4) > route.total_length() {
            break;
        }
        if k % label_every == 0 {
            let pose = crate::geometry::interp_along(&route, ego_arc).unwrap();
            let future = (1..=cfg.horizon_t)
                .map(|j| {
                    let tj = t + j as f64 * 0.2;
                    let p = crate::geometry::interp_along(&route, cruise * tj).unwrap();
                    (tj, p.x, p.y)
                })
                .collect();
            let ego = EgoRecord {
                pose,
                speed: cruise,
                future_trajectory: future,
            };
            if let Ok(labels) = derive_labels(&ego, cfg.horizon_t, cfg.path_points) {
                let frame = Frame {
                    timestamp: t,
                    ego,
                    agents: agents
                        .iter()
                        .map(|a| a.predict(t, cfg.horizon_t, 0.2, &route))
                        .collect(),
                    map_lines: vec![],
                };
                out.push((frame, labels));
            }
        }
        for a in agents.iter_mut() {
            a.advance(t, dt_sim, ego_arc);
        }
    }
    out
}

/// Build the scripted corpus shared by every training run.
pub fn build_training_corpus(cfg: &Config, seed: u64) -> Vec<(Frame, PlanLabels)> {
    let episodes = cfg.bench.train_episodes_per_family * FAMILIES.len();
    let mut out = Vec::new();
    for i in 0..episodes {
        let scenario = train_scenario(i, seed);
        out.extend(scripted_frames(&scenario, cfg, cfg.bench.train_frame_stride));
    }
    out
}

/// Cluster drive-path anchors from the corpus (ego-frame paths).
pub fn corpus_anchors(
    corpus: &[(Frame, PlanLabels)],
    cfg: &Config,
    seed: u64,
) -> (PathAnchorSet, DisplacementAnchors) {
    let paths: Vec<Polyline> = corpus
        .iter()
        .map(|(frame, labels)| to_ego_frame(&labels.drive_path, &frame.ego.pose))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xA17C);
    let outcome = cluster_path_anchors(&paths, cfg.anchors.path_count, cfg.anchors.kmeans_iters, &mut rng)
        .expect("corpus is large enough to cluster");
    let disp = DisplacementAnchors::from_look_aheads(&cfg.anchors.look_aheads, cfg.horizon_t, 0.2);
    (outcome.set, disp)
}

/// Augment the corpus at rate `alpha` and fit the regressor on it.
pub fn train_variant_params(
    corpus: &[(Frame, PlanLabels)],
    anchors: &(PathAnchorSet, DisplacementAnchors),
    cfg: &Config,
    alpha: f64,
    seed: u64,
) -> (RegressorParams, Vec<f64>) {
    let mut aug_cfg = cfg.augment.clone();
    aug_cfg.alpha = alpha;
    let ego_dims = cfg.cost.ego_dims();
    let mut samples: Vec<TrainSample> = Vec::with_capacity(corpus.len());
    for (idx, (frame, labels)) in corpus.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5EED);
        rng.set_stream(idx as u64);
        let (aug_frame, aug_labels, _report) =
            augment_frame(frame, labels, &mut rng, ego_dims, &aug_cfg);
        if let Ok(sample) =
            build_training_sample(&aug_frame, &aug_labels, &anchors.0, &anchors.1, ego_dims)
        {
            samples.push(sample);
        }
    }
    let dim = feature_dim(cfg.horizon_t);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7A11);
    let params = RegressorParams::random(dim, cfg.train.hidden_dim, cfg.horizon_t + 2, &mut rng);
    let weights = LossWeights::default();
    let (trained, history) = train(
        params,
        &samples,
        &weights,
        cfg.train.lr,
        cfg.train.epochs,
        &mut rng,
    )
    .expect("training stays finite");
    (trained, history)
}

// ---------------------------------------------------------------------------
// suite evaluation

/// Run every scenario in the suite under one pipeline, in parallel, with
/// results merged back in scenario order.
pub fn run_suite(
    suite: &[(Scenario, u64)],
    pipeline: &PlannerPipeline,
    sim: &SimConfig,
    path_points: usize,
    threads: Option<usize>,
) -> Vec<(EpisodeLog, EpisodeMetrics)> {
    let run_one = |(scenario, _seed): &(Scenario, u64)| {
        let route = scenario.route_polyline().expect("valid route");
        let mut planner = |frame: &Frame| {
            let target = route_target_path(&route, &frame.ego.pose, path_points);
            pipeline.plan(frame, &target)
        };
        run_episode(scenario, &mut planner, sim).expect("episode runs")
    };
    match threads {
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build()
                .expect("thread pool");
            pool.install(|| suite.par_iter().map(run_one).collect())
        }
        None => suite.par_iter().map(run_one).collect(),
    }
}

/// Recover the (t, speed, min agent distance) series from an episode log.
pub fn min_distance_series(
    scenario: &Scenario,
    log: &EpisodeLog,
    sim: &SimConfig,
) -> Vec<(f64, f64, f64)> {
    let dims: Vec<(f64, f64)> = scenario
        .agents
        .iter()
        .map(|s| match s {
            AgentSpec::Parked { length, width, .. } => (*length, *width),
            AgentSpec::Crossing { length, width, .. } => (*length, *width),
            _ => (4.5, 2.0),
        })
        .collect();
    log.steps
        .iter()
        .map(|step| {
            let ego_box = OrientedBox::new(
                crate::geometry::Pose2::new(step.ego.x, step.ego.y, step.ego.heading),
                sim.ego_length,
                sim.ego_width,
            );
            let min_d = step
                .agents
                .iter()
                .map(|a| {
                    let b = OrientedBox::new(
                        crate::geometry::Pose2::new(a.x, a.y, a.heading),
                        dims[a.id as usize].0,
                        dims[a.id as usize].1,
                    );
                    min_box_distance(&ego_box, &b)
                })
                .fold(f64::INFINITY, f64::min);
            (step.t, step.ego.speed, min_d)
        })
        .collect()
}

/// Full bench protocol: corpus, anchors, per-alpha training, variant matrix.
///
/// Variants: `parallel` (no-augmentation regressor, straight-ahead
/// conditioning), `cascaded` (same regressor, path conditioning), and
/// `cascaded_augment` (augmentation-trained regressor, path conditioning).
/// Additional alphas in the config produce extra `cascaded_alpha_*` rows.
pub fn run_bench(cfg: &Config, threads: Option<usize>) -> BenchResult {
    let corpus = build_training_corpus(cfg, cfg.seed);
    let anchors = corpus_anchors(&corpus, cfg, cfg.seed);

    let mut alphas = cfg.bench.alphas.clone();
    if alphas.is_empty() {
        alphas = vec![0.0, 0.1];
    }
    let trained: Vec<(f64, RegressorParams)> = alphas
        .iter()
        .map(|&a| (a, train_variant_params(&corpus, &anchors, cfg, a, cfg.seed).0))
        .collect();

    let suite = build_eval_suite(cfg.bench.episodes_per_family, cfg.seed);

    let mk_pipeline = |params: &RegressorParams, conditioning: Conditioning| PlannerPipeline {
        path_set: anchors.0.clone(),
        disp_anchors: anchors.1.clone(),
        cost: cfg.cost.clone(),
        mode: RefineMode::Learned(params.clone()),
        conditioning,
        path_points: cfg.path_points,
    };

    let mut variants: Vec<(String, f64, PlannerPipeline)> = vec![
        (
            "parallel".to_string(),
            trained[0].0,
            mk_pipeline(&trained[0].1, Conditioning::StraightAhead),
        ),
        (
            "cascaded".to_string(),
            trained[0].0,
            mk_pipeline(&trained[0].1, Conditioning::CandidatePath),
        ),
    ];
    for (alpha, params) in trained.iter().skip(1) {
        let name = if variants.len() == 2 {
            "cascaded_augment".to_string()
        } else {
            format!("cascaded_alpha_{alpha}")
        };
        variants.push((name, *alpha, mk_pipeline(params, Conditioning::CandidatePath)));
    }

    let mut rows = Vec::new();
    let mut summaries = Vec::new();
    let mut plots = Vec::new();
    for (name, alpha, pipeline) in &variants {
        let results = run_suite(&suite, pipeline, &cfg.sim, cfg.path_points, threads);
        let metrics: Vec<EpisodeMetrics> = results.iter().map(|r| r.1).collect();
        summaries.push(VariantSummary {
            name: name.clone(),
            alpha: *alpha,
            metrics: compute_suite_metrics(&metrics),
        });
        for ((scenario, seed), (log, m)) in suite.iter().zip(&results) {
            rows.push(BenchRow {
                variant: name.clone(),
                scenario: scenario.name.clone(),
                seed: *seed,
                metrics: *m,
            });
            // first episode of each family doubles as plot material
            if scenario.name.ends_with("_000") {
                plots.push(PlotSeries {
                    variant: name.clone(),
                    scenario: scenario.name.clone(),
                    points: min_distance_series(scenario, log, &cfg.sim),
                });
            }
        }
    }
    BenchResult {
        rows,
        summaries,
        plots,
    }
}
