//! Quadrotor active-perception simulation and estimation library.
//!
//! The crate bundles a synthetic world of wind turbines and electric towers, a
//! rigid-body quadrotor model, a simulated sensor suite, a small grayscale
//! rasterizer with classical vision (frame differencing, Canny, pyramidal
//! Lucas-Kanade), a simulated detector with phase-dependent confidence, a
//! bounding-box Kalman tracker, a moving-frame EKF, a minimum-acceleration
//! cubic planner, flight controllers and the mission loop tying them together.
//!
//! Frames follow NED: x north, y east, z down. Camera and body frames coincide
//! and the optical axis is the body x axis.

pub mod control;
pub mod detection;
pub mod dynamics;
pub mod ekf;
pub mod error;
pub mod mission;
pub mod planning;
pub mod raster;
pub mod report;
pub mod rng;
pub mod scenario;
pub mod sensors;
pub mod tracking;
pub mod world;

pub use error::{Error, Result};

pub use nalgebra::{Matrix3, Vector3};

pub use control::{ControlGains, PbvsEstimator};
pub use detection::{BBox, BladeModel, ConfidenceModel, PeakPrediction};
pub use dynamics::{ControlInput, QuadParams, QuadState};
pub use ekf::{EkfInputs, EkfState};
pub use mission::{DepthEstimate, HeightEstimate, MissionPhase, MissionReport};
pub use planning::{BoundaryConditions, CubicTrajectory};
pub use raster::{EdgeSet, GrayFrame};
pub use scenario::Scenario;
pub use sensors::{CameraIntrinsics, CameraPoint, NoiseConfig, PixelPoint, SensorBundle};
pub use tracking::BBoxState;
pub use world::{ObjectKind, Scene, SceneObject, TurbineParams, WorldPoint};

/// Formats a float with nine significant digits, the precision used in every log.
pub fn fmt_f64(x: f64) -> String {
    format!("{:.8e}", x)
}
