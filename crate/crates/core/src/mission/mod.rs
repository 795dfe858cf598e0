//! The inspection mission: detect the target, wait for a confident view of a
//! turbine, turn and approach by doubling steps, climb until the object top
//! sits on the principal row, convert the height into a depth and refine it
//! with the EKF while flying toward the object.

mod run;
pub mod sim;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::detection::{BBox, BladeModel};
use crate::dynamics::QuadState;
use crate::error::{Error, Result};
use crate::scenario::Scenario;
use crate::sensors::{CameraIntrinsics, PixelPoint};
use crate::world::{ObjectKind, SceneObject, WorldPoint};

pub use run::{run_mission, run_mission_observed};

/// Ratio of the reference tower and turbine heights, used to scale the
/// proximity threshold for towers.
pub const TOWER_TO_TURBINE: f64 = 31.88 / 77.48;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MissionPhase {
    Detect,
    ActiveInference,
    PlanarApproach,
    Climb,
    LambdaEstimation,
    BladeAlign,
    HeightMeasure,
    DepthEstimate,
    TrajectoryTrack,
    Done,
    Failed(String),
}

impl MissionPhase {
    pub fn name(&self) -> &str {
        match self {
            MissionPhase::Detect => "detect",
            MissionPhase::ActiveInference => "active_inference",
            MissionPhase::PlanarApproach => "planar_approach",
            MissionPhase::Climb => "climb",
            MissionPhase::LambdaEstimation => "lambda_estimation",
            MissionPhase::BladeAlign => "blade_align",
            MissionPhase::HeightMeasure => "height_measure",
            MissionPhase::DepthEstimate => "depth_estimate",
            MissionPhase::TrajectoryTrack => "trajectory_track",
            MissionPhase::Done => "done",
            MissionPhase::Failed(_) => "failed",
        }
    }

    pub fn is_terminal(&self) -> bool {
        matches!(self, MissionPhase::Done | MissionPhase::Failed(_))
    }

    /// Edges of the phase graph. Any non-terminal phase may fail.
    pub fn can_follow(&self, prev: &MissionPhase) -> bool {
        use MissionPhase::*;
        if matches!(self, Failed(_)) {
            return !prev.is_terminal();
        }
        matches!(
            (prev, self),
            (Detect, ActiveInference)
                | (Detect, PlanarApproach)
                | (ActiveInference, PlanarApproach)
                | (PlanarApproach, Climb)
                | (PlanarApproach, LambdaEstimation)
                | (Climb, HeightMeasure)
                | (Climb, LambdaEstimation)
                | (LambdaEstimation, BladeAlign)
                | (BladeAlign, HeightMeasure)
                | (HeightMeasure, DepthEstimate)
                | (DepthEstimate, TrajectoryTrack)
                | (TrajectoryTrack, Done)
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeightMethod {
    ContourAlign,
    BladeAlign,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeightEstimate {
    /// m above ground
    pub object_height: f64,
    pub method: HeightMethod,
    pub samples: usize,
    /// Vehicle z (NED) when the estimate was taken.
    pub z_w: f64,
    /// Image row of the aligned point.
    pub v_top: f64,
    /// Depth used for the sub-pixel correction.
    pub depth_used: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DepthEstimate {
    pub x_c_initial: f64,
    pub x_c_refined: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseSpan {
    pub start: f64,
    pub end: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActiveRecord {
    pub predicted_wait: f64,
    pub waited: f64,
    pub period: f64,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaRecord {
    pub lambda: f64,
    /// f / x_c of the tracked point at convergence.
    pub lambda_truth: f64,
    pub duration: f64,
    pub converged_at: f64,
    pub history: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DepthSample {
    pub t: f64,
    pub estimate: f64,
    pub std: f64,
    pub truth: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceSample {
    pub t: f64,
    pub truth: WorldPoint,
    pub estimate: WorldPoint,
    pub yaw: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClimbSample {
    pub t: f64,
    pub altitude: f64,
    pub v_top: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MissionReport {
    pub scenario: String,
    pub seed: u64,
    pub target: ObjectKind,
    pub outcome: MissionPhase,
    pub phases: Vec<(MissionPhase, PhaseSpan)>,
    pub height_truth: f64,
    pub height: Option<HeightEstimate>,
    pub depth: Option<DepthEstimate>,
    pub depth_truth_initial: Option<f64>,
    pub depth_truth_final: Option<f64>,
    pub active: Option<ActiveRecord>,
    pub blade: Option<BladeModel>,
    pub lambda: Option<LambdaRecord>,
    pub confidence_log: Vec<(f64, f64)>,
    pub pixel_error_log: Vec<(f64, f64)>,
    pub depth_log: Vec<DepthSample>,
    pub climb_log: Vec<ClimbSample>,
    pub trace: Vec<TraceSample>,
    pub sim_time: f64,
}

impl MissionReport {
    pub fn succeeded(&self) -> bool {
        self.outcome == MissionPhase::Done
    }

    pub fn phase_sequence(&self) -> Vec<MissionPhase> {
        self.phases.iter().map(|(p, _)| p.clone()).collect()
    }

    pub fn height_error(&self) -> Option<f64> {
        self.height.map(|h| h.object_height - self.height_truth)
    }

    /// (initial, final) absolute depth errors.
    pub fn depth_errors(&self) -> Option<(f64, f64)> {
        let d = self.depth?;
        Some(((d.x_c_initial - self.depth_truth_initial?).abs(), (d.x_c_refined - self.depth_truth_final?).abs()))
    }

    /// Seconds from λ convergence until the pixel error first falls inside `tol`.
    pub fn align_time(&self, tol: f64) -> Option<f64> {
        let t0 = self.lambda.as_ref()?.converged_at;
        self.pixel_error_log.iter().find(|(t, e)| *t >= t0 && e.abs() <= tol).map(|(t, _)| t - t0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MissionConfig {
    /// Hover time collecting detections before acting, s.
    pub detect_window: f64,
    /// First planar and vertical step, m.
    pub step_unit: f64,
    pub max_approach_steps: u32,
    /// Linear size ratio that ends the approach for turbines.
    pub turbine_stop_ratio: f64,
    pub tower_stop_ratio: f64,
    pub align_tolerance_px: f64,
    /// The coarse turbine climb stops once the box top is this close above the principal row.
    pub coarse_margin_px: f64,
    pub max_climb_iterations: u32,
    pub contour_lost_frames: u32,
    pub diff_threshold: u8,
    /// Blade periods of frames used to fit the blade model.
    pub blade_fit_periods: f64,
    pub lambda_step: f64,
    /// Hover time before each λ sample, s.
    pub lambda_dwell: f64,
    pub lambda_samples: usize,
    pub lambda_tolerance: f64,
    pub lambda_timeout: f64,
    /// Minimum hover time after a move, s.
    pub settle_dwell: f64,
    pub track_duration: f64,
    /// Peak speed toward the estimated point, m/s. Slow enough that the
    /// tilt needed to accelerate stays small in the image.
    pub track_speed: f64,
    /// Distance kept from the estimated point, m.
    pub standoff: f64,
    pub max_time: f64,
}

impl Default for MissionConfig {
    fn default() -> Self {
        Self {
            detect_window: 3.0,
            step_unit: 1.0,
            max_approach_steps: 10,
            turbine_stop_ratio: 1.0 / 3.0,
            tower_stop_ratio: TOWER_TO_TURBINE / 3.0,
            align_tolerance_px: 2.0,
            coarse_margin_px: 30.0,
            max_climb_iterations: 30,
            contour_lost_frames: 10,
            diff_threshold: 40,
            blade_fit_periods: 2.5,
            lambda_step: 1.0,
            lambda_dwell: 0.6,
            lambda_samples: 5,
            lambda_tolerance: 0.02,
            lambda_timeout: 60.0,
            settle_dwell: 1.0,
            track_duration: 15.0,
            track_speed: 2.0,
            standoff: 10.0,
            max_time: 900.0,
        }
    }
}

impl MissionConfig {
    pub fn stop_ratio(&self, kind: ObjectKind) -> f64 {
        match kind {
            ObjectKind::WindTurbine => self.turbine_stop_ratio,
            ObjectKind::ElectricTower => self.tower_stop_ratio,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            self.detect_window,
            self.step_unit,
            self.turbine_stop_ratio,
            self.tower_stop_ratio,
            self.align_tolerance_px,
            self.blade_fit_periods,
            self.lambda_step,
            self.lambda_tolerance,
            self.lambda_timeout,
            self.track_duration,
            self.track_speed,
            self.max_time,
        ];
        if positive.iter().all(|x| x.is_finite() && *x > 0.0) && self.lambda_samples > 0 && self.standoff >= 0.0 {
            Ok(())
        } else {
            Err(Error::Config("mission settings must be positive".into()))
        }
    }
}

/// Yaw increment that brings the box center onto the principal column.
pub fn desired_yaw(bbox: &BBox, k: &CameraIntrinsics) -> f64 {
    ((bbox.u - k.cx) / k.focal_length).atan()
}

/// Setpoint `2^k · unit` meters ahead along `yaw` at constant altitude.
pub fn approach_setpoint(k_iter: u32, yaw: f64, pos: &WorldPoint, unit: f64) -> WorldPoint {
    let d = unit * 2f64.powi(k_iter as i32);
    WorldPoint::new(pos.x + d * yaw.cos(), pos.y + d * yaw.sin(), pos.z)
}

pub fn planar_approach_step(k_iter: u32, yaw: f64, pos: &WorldPoint) -> WorldPoint {
    approach_setpoint(k_iter, yaw, pos, 1.0)
}

/// Linear size of the box relative to the frame, √(w·h / area).
pub fn size_ratio(bbox: &BBox, frame_area: f64) -> f64 {
    (bbox.w * bbox.h / frame_area).sqrt()
}

pub fn proximity_stop_at(bbox: &BBox, frame_area: f64, threshold: f64) -> bool {
    size_ratio(bbox, frame_area) >= threshold
}

/// Rule-of-thirds stop.
pub fn proximity_stop(bbox: &BBox, frame_area: f64) -> bool {
    proximity_stop_at(bbox, frame_area, 1.0 / 3.0)
}

/// Highest edge point among the tenth of points closest to the principal column.
pub fn select_contour_top(edges: &[PixelPoint], u0: f64) -> Option<PixelPoint> {
    if edges.is_empty() {
        return None;
    }
    let mut by_col: Vec<PixelPoint> = edges.to_vec();
    by_col.sort_by(|a, b| (a.u - u0).abs().total_cmp(&(b.u - u0).abs()));
    let n = by_col.len().div_ceil(10);
    by_col[..n].iter().copied().min_by(|a, b| a.v.total_cmp(&b.v))
}

/// Object height from the vehicle altitude and the residual row offset of
/// the aligned point (rows grow downward, z grows downward).
pub fn height_from_alignment(z_w: f64, v_top: f64, v0: f64, depth: f64, focal_length: f64) -> f64 {
    -z_w - (v_top - v0) * depth / focal_length
}

/// Depth from the known object height and its box height in pixels.
pub fn depth_from_height(height: &HeightEstimate, bbox: &BBox, k: &CameraIntrinsics) -> Result<f64> {
    if bbox.h < crate::detection::MIN_BOX_PX {
        return Err(Error::UnreliableDepth(bbox.h));
    }
    Ok(k.focal_length * height.object_height / bbox.h)
}

pub fn rmse(truth: &[f64], est: &[f64]) -> Result<f64> {
    if truth.len() != est.len() {
        return Err(Error::LengthMismatch(truth.len(), est.len()));
    }
    if truth.is_empty() {
        return Err(Error::InsufficientData("rmse of no samples".into()));
    }
    let s: f64 = truth.iter().zip(est).map(|(a, b)| (a - b).powi(2)).sum();
    Ok((s / truth.len() as f64).sqrt())
}

/// Optical-axis depth of the point of the object plane seen at `pixel`.
pub fn plane_depth(obj: &SceneObject, quad: &QuadState, pixel: &PixelPoint, k: &CameraIntrinsics) -> f64 {
    let ray_c = nalgebra::Vector3::new(1.0, (pixel.u - k.cx) / k.focal_length, (pixel.v - k.cy) / k.focal_length);
    let ray_w = quad.rot * ray_c;
    let n = obj.facing();
    n.dot(&(obj.base.vec() - quad.r)) / n.dot(&ray_w)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchSummary {
    pub runs: usize,
    pub succeeded: usize,
    pub height_truth: f64,
    pub height_mean: f64,
    pub height_std: f64,
    pub height_rmse: f64,
    pub depth_initial_median: f64,
    pub depth_final_median: f64,
}

/// Runs `scenario.runs` missions with seeds `seed, seed + 1, …` in parallel.
pub fn run_batch(scenario: &Scenario) -> Vec<MissionReport> {
    (0..scenario.runs as u64)
        .into_par_iter()
        .map(|i| run_mission(&scenario.clone().with_seed(scenario.seed.wrapping_add(i))))
        .collect()
}

fn median(mut xs: Vec<f64>) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        (xs[n / 2 - 1] + xs[n / 2]) / 2.0
    }
}

/// Table-style statistics over the runs that produced a height estimate.
pub fn summarize(reports: &[MissionReport]) -> BatchSummary {
    let truth = reports.first().map_or(f64::NAN, |r| r.height_truth);
    let heights: Vec<f64> = reports.iter().filter_map(|r| r.height.map(|h| h.object_height)).collect();
    let truths: Vec<f64> = reports.iter().filter(|r| r.height.is_some()).map(|r| r.height_truth).collect();
    let n = heights.len() as f64;
    let mean = heights.iter().sum::<f64>() / n;
    let std = if heights.len() > 1 {
        (heights.iter().map(|h| (h - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    let depth: Vec<(f64, f64)> = reports.iter().filter_map(|r| r.depth_errors()).collect();
    BatchSummary {
        runs: reports.len(),
        succeeded: reports.iter().filter(|r| r.succeeded()).count(),
        height_truth: truth,
        height_mean: mean,
        height_std: std,
        height_rmse: rmse(&truths, &heights).unwrap_or(f64::NAN),
        depth_initial_median: median(depth.iter().map(|d| d.0).collect()),
        depth_final_median: median(depth.iter().map(|d| d.1).collect()),
    }
}
