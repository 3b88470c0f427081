//! Pure 2D geometric primitives: poses, arc-length parameterized polylines,
//! oriented boxes with SAT overlap tests, and sinusoidal feature encoding.
//!
//! Everything here is an immutable value and every function is pure, so the
//! whole module is safe to share across threads.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    /// Input polyline has no spatial extent (all points coincident).
    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),
    /// Arc-length query with s < 0.
    #[error("invalid arc length {0}: must be non-negative")]
    InvalidArcLength(f64),
}

/// Wrap an angle into (-pi, pi].
pub fn wrap_angle(a: f64) -> f64 {
    let mut a = a % (2.0 * PI);
    if a <= -PI {
        a += 2.0 * PI;
    } else if a > PI {
        a -= 2.0 * PI;
    }
    a
}

/// Planar pose: position in meters, heading in radians in (-pi, pi].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose2 {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
}

impl Pose2 {
    pub fn new(x: f64, y: f64, heading: f64) -> Self {
        Self {
            x,
            y,
            heading: wrap_angle(heading),
        }
    }

    pub fn position(&self) -> (f64, f64) {
        (self.x, self.y)
    }

    /// Map a point from this pose's local frame into the world frame.
    pub fn local_to_world(&self, px: f64, py: f64) -> (f64, f64) {
        let (s, c) = self.heading.sin_cos();
        (self.x + px * c - py * s, self.y + px * s + py * c)
    }

    /// Map a world point into this pose's local frame.
    pub fn world_to_local(&self, wx: f64, wy: f64) -> (f64, f64) {
        let (s, c) = self.heading.sin_cos();
        let dx = wx - self.x;
        let dy = wy - self.y;
        (dx * c + dy * s, -dx * s + dy * c)
    }
}

fn dist2d(a: (f64, f64), b: (f64, f64)) -> f64 {
    ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt()
}

/// Ordered 2D polyline with a cached cumulative arc-length table.
///
/// `cum_arc[i]` is the arc length from the first vertex to vertex `i`;
/// `cum_arc[0] == 0` and the table is non-decreasing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Polyline {
    points: Vec<(f64, f64)>,
    cum_arc: Vec<f64>,
}

impl Polyline {
    pub fn new(points: Vec<(f64, f64)>) -> Result<Self, GeometryError> {
        if points.len() < 2 {
            return Err(GeometryError::DegenerateGeometry(format!(
                "polyline needs at least 2 points, got {}",
                points.len()
            )));
        }
        if points.iter().any(|p| !p.0.is_finite() || !p.1.is_finite()) {
            return Err(GeometryError::DegenerateGeometry(
                "polyline contains non-finite coordinates".into(),
            ));
        }
        let mut cum_arc = Vec::with_capacity(points.len());
        cum_arc.push(0.0);
        for i in 1..points.len() {
            let d = dist2d(points[i - 1], points[i]);
            cum_arc.push(cum_arc[i - 1] + d);
        }
        if *cum_arc.last().unwrap() <= 0.0 {
            return Err(GeometryError::DegenerateGeometry(
                "polyline has zero total length".into(),
            ));
        }
        Ok(Self { points, cum_arc })
    }

    pub fn points(&self) -> &[(f64, f64)] {
        &self.points
    }

    pub fn cum_arc(&self) -> &[f64] {
        &self.cum_arc
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn total_length(&self) -> f64 {
        *self.cum_arc.last().unwrap()
    }

    /// Heading of segment `i` (from vertex i to i+1). Zero-length segments
    /// inherit the previous segment's direction.
    fn segment_heading(&self, i: usize) -> f64 {
        let mut j = i.min(self.points.len() - 2);
        loop {
            let a = self.points[j];
            let b = self.points[j + 1];
            if dist2d(a, b) > 0.0 {
                return (b.1 - a.1).atan2(b.0 - a.0);
            }
            if j == 0 {
                return 0.0;
            }
            j -= 1;
        }
    }

    /// Project a point onto the polyline: returns (arc length of the closest
    /// point, distance to it).
    pub fn project(&self, px: f64, py: f64) -> (f64, f64) {
        let mut best_s = 0.0;
        let mut best_d = f64::INFINITY;
        for i in 0..self.points.len() - 1 {
            let a = self.points[i];
            let b = self.points[i + 1];
            let (t, d) = point_segment_param(px, py, a, b);
            if d < best_d {
                best_d = d;
                best_s = self.cum_arc[i] + t * (self.cum_arc[i + 1] - self.cum_arc[i]);
            }
        }
        (best_s, best_d)
    }
}

/// Closest-point parameter t in [0,1] along segment ab and the distance to it.
fn point_segment_param(px: f64, py: f64, a: (f64, f64), b: (f64, f64)) -> (f64, f64) {
    let abx = b.0 - a.0;
    let aby = b.1 - a.1;
    let len2 = abx * abx + aby * aby;
    if len2 <= 0.0 {
        return (0.0, dist2d((px, py), a));
    }
    let t = (((px - a.0) * abx + (py - a.1) * aby) / len2).clamp(0.0, 1.0);
    let cx = a.0 + t * abx;
    let cy = a.1 + t * aby;
    (t, dist2d((px, py), (cx, cy)))
}

/// Distance from a point to a segment.
pub fn point_segment_distance(px: f64, py: f64, a: (f64, f64), b: (f64, f64)) -> f64 {
    point_segment_param(px, py, a, b).1
}

fn segment_segment_distance(a0: (f64, f64), a1: (f64, f64), b0: (f64, f64), b1: (f64, f64)) -> f64 {
    if segments_intersect(a0, a1, b0, b1) {
        return 0.0;
    }
    point_segment_distance(a0.0, a0.1, b0, b1)
        .min(point_segment_distance(a1.0, a1.1, b0, b1))
        .min(point_segment_distance(b0.0, b0.1, a0, a1))
        .min(point_segment_distance(b1.0, b1.1, a0, a1))
}

fn cross(o: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
}

fn segments_intersect(a0: (f64, f64), a1: (f64, f64), b0: (f64, f64), b1: (f64, f64)) -> bool {
    let d1 = cross(b0, b1, a0);
    let d2 = cross(b0, b1, a1);
    let d3 = cross(a0, a1, b0);
    let d4 = cross(a0, a1, b1);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0))
        && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
    {
        return true;
    }
    let on = |p: (f64, f64), q0: (f64, f64), q1: (f64, f64), d: f64| {
        d == 0.0
            && p.0 >= q0.0.min(q1.0)
            && p.0 <= q0.0.max(q1.0)
            && p.1 >= q0.1.min(q1.1)
            && p.1 <= q0.1.max(q1.1)
    };
    on(a0, b0, b1, d1) || on(a1, b0, b1, d2) || on(b0, a0, a1, d3) || on(b1, a0, a1, d4)
}

/// Rectangle footprint: center pose plus body-frame length (along heading)
/// and width (across heading), both strictly positive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrientedBox {
    pub center: Pose2,
    pub length: f64,
    pub width: f64,
}

impl OrientedBox {
    pub fn new(center: Pose2, length: f64, width: f64) -> Self {
        assert!(
            length > 0.0 && length.is_finite() && width > 0.0 && width.is_finite(),
            "box dimensions must be positive and finite"
        );
        Self {
            center,
            length,
            width,
        }
    }
}

/// Box corners ordered front-left, front-right, rear-right, rear-left.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CornerSet {
    pub corners: [(f64, f64); 4],
}

/// Resample a point sequence at a fixed arc-length spacing.
///
/// Output vertices sit exactly on the input polyline at arcs 0, spacing,
/// 2*spacing, ...; the input's final point is appended when the total length
/// is not a multiple of the spacing.
pub fn resample_path(trajectory: &[(f64, f64)], spacing: f64) -> Result<Polyline, GeometryError> {
    assert!(spacing > 0.0, "spacing must be positive");
    if trajectory.len() < 2 {
        return Err(GeometryError::DegenerateGeometry(format!(
            "need at least 2 trajectory points, got {}",
            trajectory.len()
        )));
    }
    let mut cum = Vec::with_capacity(trajectory.len());
    cum.push(0.0);
    for i in 1..trajectory.len() {
        cum.push(cum[i - 1] + dist2d(trajectory[i - 1], trajectory[i]));
    }
    let total = *cum.last().unwrap();
    if total <= 0.0 {
        return Err(GeometryError::DegenerateGeometry(
            "all trajectory points coincide".into(),
        ));
    }

    let mut out = vec![trajectory[0]];
    let mut seg = 0usize;
    let mut target = spacing;
    while target < total {
        while cum[seg + 1] < target {
            seg += 1;
        }
        let seg_len = cum[seg + 1] - cum[seg];
        let t = if seg_len > 0.0 {
            (target - cum[seg]) / seg_len
        } else {
            0.0
        };
        let a = trajectory[seg];
        let b = trajectory[seg + 1];
        out.push((a.0 + t * (b.0 - a.0), a.1 + t * (b.1 - a.1)));
        target += spacing;
    }
    // Exact multiples land on the final input point via the loop above only
    // when target == total, which the `<` excludes; close the path here.
    let last = *trajectory.last().unwrap();
    if (target - spacing - total).abs() > 1e-12 {
        out.push(last);
    }
    Polyline::new(out)
}

/// Pose at arc length `s` along the path. Past the last vertex the final
/// segment is extrapolated linearly, so queries beyond the end stay defined.
pub fn interp_along(path: &Polyline, s: f64) -> Result<Pose2, GeometryError> {
    if s < 0.0 {
        return Err(GeometryError::InvalidArcLength(s));
    }
    let cum = path.cum_arc();
    let pts = path.points();
    let total = path.total_length();
    if s >= total {
        // extrapolate along the last non-degenerate segment
        let heading = path.segment_heading(pts.len() - 2);
        let last = pts[pts.len() - 1];
        let extra = s - total;
        return Ok(Pose2::new(
            last.0 + extra * heading.cos(),
            last.1 + extra * heading.sin(),
            heading,
        ));
    }
    // binary search for the segment containing s: cum[i] <= s < cum[i+1]
    let mut lo = 0usize;
    let mut hi = cum.len() - 1;
    while hi - lo > 1 {
        let mid = (lo + hi) / 2;
        if cum[mid] <= s {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    // skip zero-length segments forward
    let mut i = lo;
    while cum[i + 1] <= cum[i] && i + 2 < cum.len() {
        i += 1;
    }
    let seg_len = cum[i + 1] - cum[i];
    let t = if seg_len > 0.0 {
        (s - cum[i]) / seg_len
    } else {
        0.0
    };
    let a = pts[i];
    let b = pts[i + 1];
    Ok(Pose2::new(
        a.0 + t * (b.0 - a.0),
        a.1 + t * (b.1 - a.1),
        path.segment_heading(i),
    ))
}

/// Box vertices rotated by the center heading, ordered FL, FR, RR, RL.
pub fn corners_of(b: &OrientedBox) -> CornerSet {
    let hl = b.length / 2.0;
    let hw = b.width / 2.0;
    let local = [(hl, hw), (hl, -hw), (-hl, -hw), (-hl, hw)];
    let mut corners = [(0.0, 0.0); 4];
    for (i, &(lx, ly)) in local.iter().enumerate() {
        corners[i] = b.center.local_to_world(lx, ly);
    }
    CornerSet { corners }
}

fn project_onto_axis(corners: &[(f64, f64); 4], ax: f64, ay: f64) -> (f64, f64) {
    let mut min = f64::INFINITY;
    let mut max = f64::NEG_INFINITY;
    for &(x, y) in corners {
        let p = x * ax + y * ay;
        min = min.min(p);
        max = max.max(p);
    }
    (min, max)
}

fn box_axes(b: &OrientedBox) -> [(f64, f64); 2] {
    let (s, c) = b.center.heading.sin_cos();
    [(c, s), (-s, c)]
}

/// Separating-axis overlap test over the four edge normals. Touching
/// boundaries count as overlap.
pub fn boxes_overlap(a: &OrientedBox, b: &OrientedBox) -> bool {
    let ca = corners_of(a).corners;
    let cb = corners_of(b).corners;
    for (ax, ay) in box_axes(a).into_iter().chain(box_axes(b)) {
        let (amin, amax) = project_onto_axis(&ca, ax, ay);
        let (bmin, bmax) = project_onto_axis(&cb, ax, ay);
        if amax < bmin || bmax < amin {
            return false;
        }
    }
    true
}

/// Euclidean distance between the closest points of two rectangles;
/// zero exactly when they overlap.
pub fn min_box_distance(a: &OrientedBox, b: &OrientedBox) -> f64 {
    if boxes_overlap(a, b) {
        return 0.0;
    }
    let ca = corners_of(a).corners;
    let cb = corners_of(b).corners;
    let mut best = f64::INFINITY;
    for i in 0..4 {
        let a0 = ca[i];
        let a1 = ca[(i + 1) % 4];
        for j in 0..4 {
            let b0 = cb[j];
            let b1 = cb[(j + 1) % 4];
            best = best.min(segment_segment_distance(a0, a1, b0, b1));
        }
    }
    best
}

/// Signed separation between two boxes: positive clearance when apart,
/// negative SAT penetration depth when overlapping.
pub fn signed_box_separation(a: &OrientedBox, b: &OrientedBox) -> f64 {
    let ca = corners_of(a).corners;
    let cb = corners_of(b).corners;
    let mut min_pen = f64::INFINITY;
    let mut separated = false;
    for (ax, ay) in box_axes(a).into_iter().chain(box_axes(b)) {
        let (amin, amax) = project_onto_axis(&ca, ax, ay);
        let (bmin, bmax) = project_onto_axis(&cb, ax, ay);
        if amax < bmin || bmax < amin {
            separated = true;
        } else {
            min_pen = min_pen.min((amax - bmin).min(bmax - amin));
        }
    }
    if separated {
        min_box_distance(a, b)
    } else {
        -min_pen
    }
}

/// Sinusoidal positional features: for each frequency k = 0..n_freq-1 the
/// layout is [sin(2^k pi x_i) for all i, cos(2^k pi x_i) for all i].
pub fn fourier_encode(x: &[f64], n_freq: usize) -> Vec<f64> {
    assert!(n_freq >= 1, "n_freq must be at least 1");
    let mut out = Vec::with_capacity(2 * n_freq * x.len());
    for k in 0..n_freq {
        let scale = (1u64 << k) as f64 * PI;
        for &v in x {
            out.push((scale * v).sin());
        }
        for &v in x {
            out.push((scale * v).cos());
        }
    }
    out
}
