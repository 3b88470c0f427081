//! Scene data model, ground-truth label derivation, and newline-JSON frame
//! log persistence.
//!
//! A frame log starts with a header line `{"schema":"aligndrive-frames/1","dt":0.2}`
//! followed by one JSON object per frame. Loading and saving round-trip all
//! fields exactly.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{resample_path, GeometryError, OrientedBox, Polyline, Pose2};

pub const FRAME_SCHEMA: &str = "aligndrive-frames/1";
/// Label sampling interval in seconds (5 Hz).
pub const LABEL_DT: f64 = 0.2;
/// Drive-path waypoint spacing in meters.
pub const PATH_SPACING: f64 = 2.0;

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("future trajectory covers {available} steps, need {needed}")]
    InsufficientHorizon { available: usize, needed: usize },
    #[error("log contains reversing motion at future step {step}")]
    ReversingLog { step: usize },
    #[error("parse error at line {line}: {detail}")]
    ParseError { line: usize, detail: String },
    #[error("schema version mismatch: found {found:?}, expected {expected:?}")]
    VersionError { found: String, expected: String },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentCategory {
    Vehicle,
    Pedestrian,
    Cyclist,
}

/// One dynamic agent: current oriented-box state plus T future poses at the
/// label interval.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentTrack {
    pub id: u64,
    pub category: AgentCategory,
    pub bbox: OrientedBox,
    pub future: Vec<Pose2>,
    pub confidence: f64,
}

impl AgentTrack {
    /// Box footprint at future step `t` (t = 0 is the current state).
    pub fn box_at_step(&self, t: usize) -> OrientedBox {
        if t == 0 || self.future.is_empty() {
            self.bbox
        } else {
            let pose = self.future[(t - 1).min(self.future.len() - 1)];
            OrientedBox::new(pose, self.bbox.length, self.bbox.width)
        }
    }
}

/// Ego state at a frame: pose, speed, and the logged future trajectory as
/// timestamped positions at the label rate.
#[derive(Debug, Clone, PartialEq)]
pub struct EgoRecord {
    pub pose: Pose2,
    pub speed: f64,
    /// (t, x, y) samples with strictly increasing timestamps at LABEL_DT.
    pub future_trajectory: Vec<(f64, f64, f64)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MapRole {
    Lane,
    StopLine,
    Boundary,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MapLine {
    pub role: MapRole,
    pub line: Polyline,
}

/// One logged frame: ego record, agents, and map polylines.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub timestamp: f64,
    pub ego: EgoRecord,
    pub agents: Vec<AgentTrack>,
    pub map_lines: Vec<MapLine>,
}

/// Per-step longitudinal travel distances in meters at fixed dt.
/// `values[0]` is the distance covered over the step ending now; indices
/// 1..=T are future steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisplacementSequence {
    pub values: Vec<f64>,
    pub dt: f64,
}

impl DisplacementSequence {
    pub fn new(values: Vec<f64>, dt: f64) -> Self {
        debug_assert!(values.iter().all(|v| v.is_finite() && *v >= 0.0));
        Self { values, dt }
    }

    /// Number of future steps T (length is T+1).
    pub fn horizon(&self) -> usize {
        self.values.len().saturating_sub(1)
    }

    /// Sum of the future displacements, values[1..=T].
    pub fn total_future(&self) -> f64 {
        self.values[1..].iter().sum()
    }

    /// Cumulative future travel through step t (t = 0 gives 0).
    pub fn cumulative_at(&self, t: usize) -> f64 {
        self.values[1..=t.min(self.horizon())].iter().sum()
    }
}

/// Ground-truth plan labels for one frame: the spatial drive path and the
/// per-step displacement sequence along it.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanLabels {
    pub drive_path: Polyline,
    pub displacements: DisplacementSequence,
    /// True when the logged future was too short and the path was extended
    /// by straight-line extrapolation.
    pub extended: bool,
}

/// Derive plan labels from an ego record: a P-point drive path resampled at
/// 2 m from the logged future, and T+1 per-step displacements.
///
/// Logs containing reversing motion are rejected.
pub fn derive_labels(
    ego: &EgoRecord,
    horizon_t: usize,
    path_points_p: usize,
) -> Result<PlanLabels, SceneError> {
    if ego.future_trajectory.len() < horizon_t {
        return Err(SceneError::InsufficientHorizon {
            available: ego.future_trajectory.len(),
            needed: horizon_t,
        });
    }

    // step 0 = current position, steps 1..=T from the log
    let mut pts = Vec::with_capacity(horizon_t + 1);
    pts.push((ego.pose.x, ego.pose.y));
    for &(_, x, y) in ego.future_trajectory.iter().take(horizon_t) {
        pts.push((x, y));
    }

    // reject reversing: consecutive motion vectors may not flip direction
    let mut prev_dir: Option<(f64, f64)> = None;
    for (i, w) in pts.windows(2).enumerate() {
        let dx = w[1].0 - w[0].0;
        let dy = w[1].1 - w[0].1;
        let n = (dx * dx + dy * dy).sqrt();
        if n < 1e-9 {
            continue;
        }
        let dir = (dx / n, dy / n);
        if let Some(p) = prev_dir {
            if p.0 * dir.0 + p.1 * dir.1 < 0.0 {
                return Err(SceneError::ReversingLog { step: i + 1 });
            }
        }
        prev_dir = Some(dir);
    }

    let mut values = Vec::with_capacity(horizon_t + 1);
    values.push(ego.speed.max(0.0) * LABEL_DT);
    for w in pts.windows(2) {
        values.push(((w[1].0 - w[0].0).powi(2) + (w[1].1 - w[0].1).powi(2)).sqrt());
    }

    let resampled = resample_path(&pts, PATH_SPACING)?;
    let mut path_pts: Vec<(f64, f64)> = resampled.points().to_vec();
    let mut extended = false;
    if path_pts.len() > path_points_p {
        path_pts.truncate(path_points_p);
    } else if path_pts.len() < path_points_p {
        extended = true;
        let n = path_pts.len();
        let (lx, ly) = path_pts[n - 1];
        let (px, py) = path_pts[n - 2];
        let norm = ((lx - px).powi(2) + (ly - py).powi(2)).sqrt();
        let dir = if norm > 0.0 {
            ((lx - px) / norm, (ly - py) / norm)
        } else {
            (ego.pose.heading.cos(), ego.pose.heading.sin())
        };
        for k in 1..=(path_points_p - n) {
            path_pts.push((lx + dir.0 * PATH_SPACING * k as f64, ly + dir.1 * PATH_SPACING * k as f64));
        }
    }
    let drive_path = Polyline::new(path_pts)?;

    Ok(PlanLabels {
        drive_path,
        displacements: DisplacementSequence::new(values, LABEL_DT),
        extended,
    })
}

// ---------------------------------------------------------------------------
// wire format

#[derive(Serialize, Deserialize)]
struct HeaderWire {
    schema: String,
    dt: f64,
}

#[derive(Serialize, Deserialize)]
struct EgoWire {
    x: f64,
    y: f64,
    heading: f64,
    speed: f64,
    future: Vec<[f64; 3]>,
}

#[derive(Serialize, Deserialize)]
struct AgentWire {
    id: u64,
    category: AgentCategory,
    x: f64,
    y: f64,
    heading: f64,
    length: f64,
    width: f64,
    confidence: f64,
    future: Vec<[f64; 3]>,
}

#[derive(Serialize, Deserialize)]
struct MapWire {
    role: MapRole,
    points: Vec<[f64; 2]>,
}

#[derive(Serialize, Deserialize)]
struct FrameWire {
    timestamp: f64,
    ego: EgoWire,
    agents: Vec<AgentWire>,
    map: Vec<MapWire>,
}

impl From<&Frame> for FrameWire {
    fn from(f: &Frame) -> Self {
        FrameWire {
            timestamp: f.timestamp,
            ego: EgoWire {
                x: f.ego.pose.x,
                y: f.ego.pose.y,
                heading: f.ego.pose.heading,
                speed: f.ego.speed,
                future: f
                    .ego
                    .future_trajectory
                    .iter()
                    .map(|&(t, x, y)| [t, x, y])
                    .collect(),
            },
            agents: f
                .agents
                .iter()
                .map(|a| AgentWire {
                    id: a.id,
                    category: a.category,
                    x: a.bbox.center.x,
                    y: a.bbox.center.y,
                    heading: a.bbox.center.heading,
                    length: a.bbox.length,
                    width: a.bbox.width,
                    confidence: a.confidence,
                    future: a.future.iter().map(|p| [p.x, p.y, p.heading]).collect(),
                })
                .collect(),
            map: f
                .map_lines
                .iter()
                .map(|m| MapWire {
                    role: m.role,
                    points: m.line.points().iter().map(|&(x, y)| [x, y]).collect(),
                })
                .collect(),
        }
    }
}

impl FrameWire {
    fn into_frame(self, line: usize) -> Result<Frame, SceneError> {
        let map_lines = self
            .map
            .into_iter()
            .map(|m| {
                Polyline::new(m.points.iter().map(|p| (p[0], p[1])).collect())
                    .map(|l| MapLine { role: m.role, line: l })
                    .map_err(|e| SceneError::ParseError {
                        line,
                        detail: format!("map polyline: {e}"),
                    })
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Frame {
            timestamp: self.timestamp,
            ego: EgoRecord {
                pose: Pose2::new(self.ego.x, self.ego.y, self.ego.heading),
                speed: self.ego.speed,
                future_trajectory: self.ego.future.iter().map(|f| (f[0], f[1], f[2])).collect(),
            },
            agents: self
                .agents
                .into_iter()
                .map(|a| AgentTrack {
                    id: a.id,
                    category: a.category,
                    bbox: OrientedBox::new(Pose2::new(a.x, a.y, a.heading), a.length, a.width),
                    future: a.future.iter().map(|p| Pose2::new(p[0], p[1], p[2])).collect(),
                    confidence: a.confidence,
                })
                .collect(),
            map_lines,
        })
    }
}

/// Write frames as newline-delimited JSON with a schema header line.
pub fn save_frames(frames: &[Frame], path: &Path) -> Result<(), SceneError> {
    let mut w = BufWriter::new(File::create(path)?);
    write_frames(frames, &mut w)
}

pub fn write_frames<W: Write>(frames: &[Frame], w: &mut W) -> Result<(), SceneError> {
    let header = HeaderWire {
        schema: FRAME_SCHEMA.to_string(),
        dt: LABEL_DT,
    };
    serde_json::to_writer(&mut *w, &header).map_err(io_err)?;
    w.write_all(b"\n")?;
    for f in frames {
        serde_json::to_writer(&mut *w, &FrameWire::from(f)).map_err(io_err)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

fn io_err(e: serde_json::Error) -> SceneError {
    SceneError::Io(std::io::Error::new(std::io::ErrorKind::Other, e))
}

/// Load frames from a newline-delimited JSON log, validating the header.
pub fn load_frames(path: &Path) -> Result<Vec<Frame>, SceneError> {
    let reader = BufReader::new(File::open(path)?);
    read_frames(reader)
}

pub fn read_frames<R: BufRead>(reader: R) -> Result<Vec<Frame>, SceneError> {
    let mut frames = Vec::new();
    let mut lines = reader.lines();
    let header_line = lines
        .next()
        .ok_or_else(|| SceneError::ParseError {
            line: 1,
            detail: "empty file, missing header".into(),
        })??;
    let header: HeaderWire =
        serde_json::from_str(&header_line).map_err(|e| SceneError::ParseError {
            line: 1,
            detail: format!("header: {e}"),
        })?;
    if header.schema != FRAME_SCHEMA {
        return Err(SceneError::VersionError {
            found: header.schema,
            expected: FRAME_SCHEMA.to_string(),
        });
    }
    for (idx, line) in lines.enumerate() {
        let line_no = idx + 2;
        let text = line?;
        if text.trim().is_empty() {
            continue;
        }
        let wire: FrameWire =
            serde_json::from_str(&text).map_err(|e| SceneError::ParseError {
                line: line_no,
                detail: e.to_string(),
            })?;
        let frame = wire.into_frame(line_no)?;
        let mut seen = std::collections::HashSet::new();
        for a in &frame.agents {
            if !seen.insert(a.id) {
                return Err(SceneError::ParseError {
                    line: line_no,
                    detail: format!("duplicate agent id {}", a.id),
                });
            }
        }
        frames.push(frame);
    }
    Ok(frames)
}
