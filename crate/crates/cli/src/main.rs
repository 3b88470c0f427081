//! Command-line front end: anchor construction, data augmentation, regressor
//! training, closed-loop simulation, and the ablation benchmark.
//!
//! Exit codes: 0 on success, 1 on runtime failure, 2 on usage or config
//! errors. Every subcommand is deterministic under --seed.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use plan_core::augment::{augment_frame, AgentRole, AugmentReport};
use plan_core::bench::run_bench;
use plan_core::config::Config;
use plan_core::learn::{
    build_training_sample, feature_dim, train, LossWeights, RegressorParams, TrainSample,
};
use plan_core::pipeline::{Conditioning, PlannerPipeline, RefineMode};
use plan_core::planner::{
    cluster_path_anchors, fan_path_anchors, load_anchors, save_anchors, to_ego_frame,
    DisplacementAnchors, PathAnchorSet,
};
use plan_core::scene::{derive_labels, load_frames, save_frames, Frame, PlanLabels};
use plan_core::simctrl::{compute_suite_metrics, EpisodeMetrics, Scenario};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Parser)]
#[command(name = "plan-cli", version, about = "Cascaded displacement planning toolkit")]
struct Cli {
    /// JSON configuration file; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (default: current directory).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Re-read every produced file and validate it against its schema.
    #[arg(long, global = true)]
    check: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Cluster drive-path anchors from a frame log and write the anchor file.
    Anchors,
    /// Stream frames through the augmentation pipeline.
    Augment,
    /// Fit the offset/score regressor on a labeled frame log.
    Train,
    /// Run a scenario suite closed-loop and write logs plus metrics.
    Simulate,
    /// Run the ablation benchmark matrix and write comparison CSVs.
    Bench,
}

enum CliError {
    Usage(String),
    Runtime(String),
}

impl CliError {
    fn usage(msg: impl Into<String>) -> Self {
        CliError::Usage(msg.into())
    }
    fn runtime(msg: impl Into<String>) -> Self {
        CliError::Runtime(msg.into())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut cfg = match &cli.config {
        Some(path) => Config::load(path).map_err(|e| CliError::usage(format!("{e}")))?,
        None => Config::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    let out_dir = cli.out.clone().unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&out_dir)
        .map_err(|e| CliError::usage(format!("cannot create output dir: {e}")))?;
    let threads = suite_threads()?;

    match cli.command {
        Command::Anchors => cmd_anchors(&cfg, &out_dir, cli.check),
        Command::Augment => cmd_augment(&cfg, &out_dir, cli.check),
        Command::Train => cmd_train(&cfg, &out_dir, cli.check),
        Command::Simulate => cmd_simulate(&cfg, &out_dir, cli.check, threads),
        Command::Bench => cmd_bench(&cfg, &out_dir, cli.check, threads),
    }
}

/// PLAN_CLI_THREADS caps suite parallelism.
fn suite_threads() -> Result<Option<usize>, CliError> {
    match std::env::var("PLAN_CLI_THREADS") {
        Ok(v) => v
            .parse::<usize>()
            .map(Some)
            .map_err(|_| CliError::usage(format!("PLAN_CLI_THREADS must be a number, got {v:?}"))),
        Err(_) => Ok(None),
    }
}

fn frames_input(cfg: &Config) -> Result<Vec<Frame>, CliError> {
    let path = cfg
        .frames_file
        .as_ref()
        .ok_or_else(|| CliError::usage("config.frames_file is required for this command"))?;
    let frames =
        load_frames(Path::new(path)).map_err(|e| CliError::usage(format!("frames: {e}")))?;
    if frames.is_empty() {
        return Err(CliError::usage(format!("frames file {path} holds no frames")));
    }
    Ok(frames)
}

fn labels_for(cfg: &Config, frames: &[Frame]) -> Vec<Option<PlanLabels>> {
    frames
        .iter()
        .map(|f| derive_labels(&f.ego, cfg.horizon_t, cfg.path_points).ok())
        .collect()
}

fn cmd_anchors(cfg: &Config, out_dir: &Path, check: bool) -> Result<(), CliError> {
    let frames = frames_input(cfg)?;
    let labels = labels_for(cfg, &frames);
    let paths: Vec<_> = frames
        .iter()
        .zip(&labels)
        .filter_map(|(f, l)| l.as_ref().map(|l| to_ego_frame(&l.drive_path, &f.ego.pose)))
        .collect();
    if paths.len() < cfg.anchors.path_count {
        return Err(CliError::usage(format!(
            "only {} usable frames for {} clusters",
            paths.len(),
            cfg.anchors.path_count
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let outcome = cluster_path_anchors(&paths, cfg.anchors.path_count, cfg.anchors.kmeans_iters, &mut rng)
        .map_err(|e| CliError::runtime(format!("{e}")))?;
    let disp = DisplacementAnchors::from_look_aheads(&cfg.anchors.look_aheads, cfg.horizon_t, 0.2);
    let file = out_dir.join("anchors.json");
    save_anchors(&outcome.set, &disp, &file).map_err(|e| CliError::runtime(format!("{e}")))?;
    println!(
        "anchors: {} paths from {} frames, inertia {:.3} -> {:.3}, wrote {}",
        outcome.set.count(),
        paths.len(),
        outcome.inertia.first().copied().unwrap_or(0.0),
        outcome.inertia.last().copied().unwrap_or(0.0),
        file.display()
    );
    if check {
        let (p, d) = load_anchors(&file).map_err(|e| CliError::runtime(format!("check: {e}")))?;
        if p.count() != cfg.anchors.path_count || d.count() != cfg.anchors.look_aheads.len() {
            return Err(CliError::runtime("check: anchor counts differ".to_string()));
        }
        println!("check: anchors file validates");
    }
    Ok(())
}

fn cmd_augment(cfg: &Config, out_dir: &Path, check: bool) -> Result<(), CliError> {
    let frames = frames_input(cfg)?;
    let labels = labels_for(cfg, &frames);
    let ego_dims = cfg.cost.ego_dims();
    let mut out_frames = Vec::with_capacity(frames.len());
    let mut reports = Vec::with_capacity(frames.len());
    for (idx, (frame, label)) in frames.iter().zip(&labels).enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(idx as u64);
        match label {
            Some(l) => {
                let (f, _l, report) = augment_frame(frame, l, &mut rng, ego_dims, &cfg.augment);
                out_frames.push(f);
                reports.push(report);
            }
            None => {
                out_frames.push(frame.clone());
                reports.push(AugmentReport::untouched());
            }
        }
    }
    let frames_path = out_dir.join("frames_augmented.jsonl");
    save_frames(&out_frames, &frames_path).map_err(|e| CliError::runtime(format!("{e}")))?;
    let reports_path = out_dir.join("augment_reports.jsonl");
    let mut text = String::new();
    for (i, r) in reports.iter().enumerate() {
        let mut obj = serde_json::to_value(r).unwrap();
        obj.as_object_mut()
            .unwrap()
            .insert("frame".into(), serde_json::json!(i));
        text.push_str(&serde_json::to_string(&obj).unwrap());
        text.push('\n');
    }
    std::fs::write(&reports_path, text).map_err(|e| CliError::runtime(format!("{e}")))?;

    let inserted = reports.iter().filter(|r| r.inserted).count();
    let threatening: Vec<f64> = reports
        .iter()
        .filter(|r| r.role == AgentRole::Threatening)
        .map(|r| r.beta)
        .collect();
    let mean_beta = if threatening.is_empty() {
        1.0
    } else {
        threatening.iter().sum::<f64>() / threatening.len() as f64
    };
    println!(
        "augment: inserted {:.4} of {} frames, mean beta among threatening {:.4}",
        inserted as f64 / frames.len() as f64,
        frames.len(),
        mean_beta
    );
    if check {
        let reloaded =
            load_frames(&frames_path).map_err(|e| CliError::runtime(format!("check: {e}")))?;
        if reloaded.len() != frames.len() {
            return Err(CliError::runtime("check: frame count changed".to_string()));
        }
        println!("check: augmented frames validate");
    }
    Ok(())
}

/// Apply report betas to freshly derived labels (report scaling is uniform
/// over the future steps, so re-scaling reproduces the augmented labels).
fn apply_reports(labels: &mut [Option<PlanLabels>], reports_file: &Path) -> Result<(), CliError> {
    let text = std::fs::read_to_string(reports_file)
        .map_err(|e| CliError::usage(format!("reports: {e}")))?;
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let v: serde_json::Value =
            serde_json::from_str(line).map_err(|e| CliError::usage(format!("reports: {e}")))?;
        let idx = v["frame"].as_u64().ok_or_else(|| CliError::usage("reports: missing frame"))? as usize;
        let beta = v["beta"].as_f64().unwrap_or(1.0);
        if let Some(Some(l)) = labels.get_mut(idx) {
            for val in l.displacements.values.iter_mut().skip(1) {
                *val *= beta;
            }
        }
    }
    Ok(())
}

fn anchors_or_cluster(
    cfg: &Config,
    anchors_file: &Option<String>,
    frames: &[Frame],
    labels: &[Option<PlanLabels>],
) -> Result<(PathAnchorSet, DisplacementAnchors), CliError> {
    if let Some(path) = anchors_file {
        return load_anchors(Path::new(path)).map_err(|e| CliError::usage(format!("{e}")));
    }
    let paths: Vec<_> = frames
        .iter()
        .zip(labels)
        .filter_map(|(f, l)| l.as_ref().map(|l| to_ego_frame(&l.drive_path, &f.ego.pose)))
        .collect();
    if paths.len() < cfg.anchors.path_count {
        return Err(CliError::usage("not enough frames to cluster anchors".to_string()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xA17C);
    let outcome = cluster_path_anchors(&paths, cfg.anchors.path_count, cfg.anchors.kmeans_iters, &mut rng)
        .map_err(|e| CliError::runtime(format!("{e}")))?;
    Ok((
        outcome.set,
        DisplacementAnchors::from_look_aheads(&cfg.anchors.look_aheads, cfg.horizon_t, 0.2),
    ))
}

fn cmd_train(cfg: &Config, out_dir: &Path, check: bool) -> Result<(), CliError> {
    let frames = frames_input(cfg)?;
    let mut labels = labels_for(cfg, &frames);
    if let Some(reports) = &cfg.train.reports_file {
        apply_reports(&mut labels, Path::new(reports))?;
    }
    let anchors = anchors_or_cluster(cfg, &cfg.train.anchors_file, &frames, &labels)?;
    let ego_dims = cfg.cost.ego_dims();
    let samples: Vec<TrainSample> = frames
        .iter()
        .zip(&labels)
        .filter_map(|(f, l)| {
            l.as_ref()
                .and_then(|l| build_training_sample(f, l, &anchors.0, &anchors.1, ego_dims).ok())
        })
        .collect();
    if samples.is_empty() {
        return Err(CliError::usage("no usable training samples".to_string()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x7A11);
    let params = RegressorParams::random(
        feature_dim(cfg.horizon_t),
        cfg.train.hidden_dim,
        cfg.horizon_t + 2,
        &mut rng,
    );
    let (trained, history) = train(
        params,
        &samples,
        &LossWeights::default(),
        cfg.train.lr,
        cfg.train.epochs,
        &mut rng,
    )
    .map_err(|e| CliError::runtime(format!("{e}")))?;
    let file = out_dir.join("params.json");
    trained
        .save(&file)
        .map_err(|e| CliError::runtime(format!("{e}")))?;
    println!(
        "train: {} samples, loss {:.4} -> {:.4}, wrote {}",
        samples.len(),
        history.first().copied().unwrap_or(0.0),
        history.last().copied().unwrap_or(0.0),
        file.display()
    );
    if check {
        RegressorParams::load(&file).map_err(|e| CliError::runtime(format!("check: {e}")))?;
        println!("check: params file validates");
    }
    Ok(())
}

const METRICS_HEADER: &str = "scenario,seed,success,collided,completion,avg_speed,comfort";

fn metrics_row(scenario: &str, seed: u64, m: &EpisodeMetrics) -> String {
    format!(
        "{},{},{},{},{},{},{}",
        scenario, seed, m.success, m.collided, m.route_completion, m.avg_speed, m.comfort_proxy
    )
}

fn cmd_simulate(cfg: &Config, out_dir: &Path, check: bool, threads: Option<usize>) -> Result<(), CliError> {
    let scenario_file = cfg
        .simulate
        .scenario_file
        .as_ref()
        .ok_or_else(|| CliError::usage("config.simulate.scenario_file is required"))?;
    let scenarios = Scenario::load_list(Path::new(scenario_file))
        .map_err(|e| CliError::usage(format!("{e}")))?;
    if scenarios.is_empty() {
        return Err(CliError::usage("scenario file holds no scenarios".to_string()));
    }
    let anchors = match &cfg.simulate.anchors_file {
        Some(path) => load_anchors(Path::new(path)).map_err(|e| CliError::usage(format!("{e}")))?,
        None => (
            fan_path_anchors(cfg.anchors.path_count, cfg.path_points, 0.045),
            DisplacementAnchors::from_look_aheads(&cfg.anchors.look_aheads, cfg.horizon_t, 0.2),
        ),
    };
    let mode = match &cfg.simulate.params_file {
        Some(path) => RefineMode::Learned(
            RegressorParams::load(Path::new(path)).map_err(|e| CliError::usage(format!("{e}")))?,
        ),
        None => RefineMode::CostDescent,
    };
    let pipeline = PlannerPipeline {
        path_set: anchors.0,
        disp_anchors: anchors.1,
        cost: cfg.cost.clone(),
        mode,
        conditioning: Conditioning::CandidatePath,
        path_points: cfg.path_points,
    };
    let suite: Vec<_> = scenarios.iter().map(|s| (s.clone(), cfg.seed)).collect();
    let results = plan_core::bench::run_suite(&suite, &pipeline, &cfg.sim, cfg.path_points, threads);

    let mut csv = String::from(METRICS_HEADER);
    csv.push('\n');
    for ((scenario, seed), (log, metrics)) in suite.iter().zip(&results) {
        csv.push_str(&metrics_row(&scenario.name, *seed, metrics));
        csv.push('\n');
        let log_path = out_dir.join(format!("episode_{}.jsonl", scenario.name));
        let mut w = std::io::BufWriter::new(
            std::fs::File::create(&log_path).map_err(|e| CliError::runtime(format!("{e}")))?,
        );
        log.write_jsonl(&mut w).map_err(|e| CliError::runtime(format!("{e}")))?;
    }
    let metrics_path = out_dir.join("metrics.csv");
    std::fs::write(&metrics_path, &csv).map_err(|e| CliError::runtime(format!("{e}")))?;

    let all: Vec<EpisodeMetrics> = results.iter().map(|r| r.1).collect();
    let suite_metrics = compute_suite_metrics(&all);
    println!(
        "simulate: {} episodes, success_rate {:.3}, collision_rate {:.3}, wrote {}",
        all.len(),
        suite_metrics.success_rate,
        suite_metrics.collision_rate,
        metrics_path.display()
    );
    if check {
        let text = std::fs::read_to_string(&metrics_path)
            .map_err(|e| CliError::runtime(format!("check: {e}")))?;
        if !text.starts_with(METRICS_HEADER) || text.lines().count() != all.len() + 1 {
            return Err(CliError::runtime("check: metrics.csv malformed".to_string()));
        }
        println!("check: metrics validate");
    }
    Ok(())
}

fn cmd_bench(cfg: &Config, out_dir: &Path, check: bool, threads: Option<usize>) -> Result<(), CliError> {
    let result = run_bench(cfg, threads);

    let mut comparison = String::from("variant,scenario,seed,success,collided,completion,avg_speed,comfort\n");
    for row in &result.rows {
        comparison.push_str(&format!(
            "{},{}\n",
            row.variant,
            metrics_row(&row.scenario, row.seed, &row.metrics)
        ));
    }
    let comparison_path = out_dir.join("bench_comparison.csv");
    std::fs::write(&comparison_path, &comparison).map_err(|e| CliError::runtime(format!("{e}")))?;

    let mut summary = String::from(
        "variant,alpha,success_rate,collision_rate,mean_completion,mean_avg_speed,mean_comfort\n",
    );
    for s in &result.summaries {
        summary.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            s.name,
            s.alpha,
            s.metrics.success_rate,
            s.metrics.collision_rate,
            s.metrics.mean_completion,
            s.metrics.mean_avg_speed,
            s.metrics.mean_comfort
        ));
    }
    let summary_path = out_dir.join("bench_summary.csv");
    std::fs::write(&summary_path, &summary).map_err(|e| CliError::runtime(format!("{e}")))?;

    for plot in &result.plots {
        let mut text = String::from("t,speed,min_agent_distance\n");
        for (t, v, d) in &plot.points {
            text.push_str(&format!("{t},{v},{d}\n"));
        }
        let path = out_dir.join(format!("plot_{}_{}.csv", plot.variant, plot.scenario));
        std::fs::write(&path, text).map_err(|e| CliError::runtime(format!("{e}")))?;
    }

    for s in &result.summaries {
        println!(
            "bench: {:<18} alpha {:<4} success_rate {:.3} collision_rate {:.3}",
            s.name, s.alpha, s.metrics.success_rate, s.metrics.collision_rate
        );
    }
    println!("bench: wrote {} and {}", comparison_path.display(), summary_path.display());
    if check {
        for path in [&comparison_path, &summary_path] {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::runtime(format!("check: {e}")))?;
            if text.lines().count() < 2 {
                return Err(CliError::runtime(format!("check: {} too short", path.display())));
            }
        }
        println!("check: bench outputs validate");
    }
    Ok(())
}
