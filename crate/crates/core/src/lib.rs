//! Cascaded lateral/longitudinal motion planning toolkit.
//!
//! The crate is organized around a drive-path / displacement decomposition of
//! planning: a lateral drive path (waypoints at fixed spatial intervals) and a
//! longitudinal plan expressed as per-step travel distances along that path.
//! On top of the plan representation sit data augmentation for safety-critical
//! scenarios, anchor-based candidate refinement and selection, a small trained
//! offset regressor, and a closed-loop kinematic micro-simulator with PID
//! tracking.

pub mod augment;
pub mod bench;
pub mod config;
pub mod geometry;
pub mod learn;
pub mod pipeline;
pub mod planner;
pub mod scene;
pub mod simctrl;

pub use geometry::{
    boxes_overlap, corners_of, fourier_encode, interp_along, min_box_distance, resample_path,
    CornerSet, GeometryError, OrientedBox, Polyline, Pose2,
};
