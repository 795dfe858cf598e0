//! Pinhole camera, differential GPS with altimeter, and IMU models.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::dynamics::QuadState;
use crate::error::{Error, Result};
use crate::rng::{gauss, SimRng};
use crate::world::WorldPoint;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CameraIntrinsics {
    /// pixels
    pub focal_length: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl Default for CameraIntrinsics {
    fn default() -> Self {
        Self {
            focal_length: 320.0,
            cx: 320.0,
            cy: 240.0,
            width: 640,
            height: 480,
        }
    }
}

impl CameraIntrinsics {
    pub fn frame_area(&self) -> f64 {
        (self.width * self.height) as f64
    }

    pub fn contains(&self, p: &PixelPoint) -> bool {
        p.u >= -0.5 && p.v >= -0.5 && p.u < self.width as f64 - 0.5 && p.v < self.height as f64 - 0.5
    }
}

/// Pixel coordinates; pixel (i, j) is centered at u = i, v = j.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PixelPoint {
    pub u: f64,
    pub v: f64,
}

impl PixelPoint {
    pub fn new(u: f64, v: f64) -> Self {
        Self { u, v }
    }
}

/// Camera-frame point: x along the optical axis, y right, z down.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraPoint {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl CameraPoint {
    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn vec(&self) -> Vector3<f64> {
        Vector3::new(self.x, self.y, self.z)
    }
}

impl From<Vector3<f64>> for CameraPoint {
    fn from(v: Vector3<f64>) -> Self {
        Self::new(v.x, v.y, v.z)
    }
}

pub fn world_to_camera(p: &WorldPoint, quad: &QuadState) -> CameraPoint {
    (quad.rot.transpose() * (p.vec() - quad.r)).into()
}

pub fn project(p: &CameraPoint, k: &CameraIntrinsics) -> Result<PixelPoint> {
    if p.x <= 0.0 {
        return Err(Error::BehindCamera(p.x));
    }
    Ok(PixelPoint::new(
        (p.y * k.focal_length + p.x * k.cx) / p.x,
        (p.z * k.focal_length + p.x * k.cy) / p.x,
    ))
}

pub fn back_project_lateral(u: f64, x_c: f64, k: &CameraIntrinsics) -> f64 {
    (u - k.cx) * x_c / k.focal_length
}

pub fn back_project_vertical(v: f64, x_c: f64, k: &CameraIntrinsics) -> f64 {
    (v - k.cy) * x_c / k.focal_length
}

/// Vertical pixel coordinate the point would have if the camera were level
/// (roll = pitch = 0, same yaw). Used to remove attitude jitter from
/// alignment measurements taken while hovering.
pub fn level_pixel_v(p: &PixelPoint, roll: f64, pitch: f64, k: &CameraIntrinsics) -> f64 {
    level_pixel(p, roll, pitch, k).v
}

/// Both coordinates of [`level_pixel_v`].
pub fn level_pixel(p: &PixelPoint, roll: f64, pitch: f64, k: &CameraIntrinsics) -> PixelPoint {
    let ray = Vector3::new(k.focal_length, p.u - k.cx, p.v - k.cy);
    let level = rpy_matrix(roll, pitch, 0.0) * ray;
    PixelPoint::new(k.cx + k.focal_length * level.y / level.x, k.cy + k.focal_length * level.z / level.x)
}

/// Z-Y-X (yaw, pitch, roll) rotation, body → world.
pub fn rpy_matrix(roll: f64, pitch: f64, yaw: f64) -> Matrix3<f64> {
    let (sr, cr) = roll.sin_cos();
    let (sp, cp) = pitch.sin_cos();
    let (sy, cy) = yaw.sin_cos();
    Matrix3::new(
        cy * cp,
        cy * sp * sr - sy * cr,
        cy * sp * cr + sy * sr,
        sy * cp,
        sy * sp * sr + cy * cr,
        sy * sp * cr - cy * sr,
        -sp,
        cp * sr,
        cp * cr,
    )
}

pub fn rpy_from_matrix(r: &Matrix3<f64>) -> (f64, f64, f64) {
    let pitch = (-r[(2, 0)]).clamp(-1.0, 1.0).asin();
    let roll = r[(2, 1)].atan2(r[(2, 2)]);
    let yaw = r[(1, 0)].atan2(r[(0, 0)]);
    (roll, pitch, yaw)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseConfig {
    /// m
    pub gps_position: f64,
    /// m/s
    pub gps_velocity: f64,
    /// m
    pub altimeter: f64,
    /// rad/s
    pub imu_rate: f64,
    /// rad
    pub imu_rpy: f64,
    /// px, detector box center and size
    pub pixel: f64,
    /// detector confidence
    pub confidence: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            gps_position: 0.05,
            gps_velocity: 0.02,
            altimeter: 0.02,
            imu_rate: 0.005,
            imu_rpy: 0.001,
            pixel: 0.5,
            confidence: 0.0015,
        }
    }
}

impl NoiseConfig {
    pub fn noiseless() -> Self {
        Self {
            gps_position: 0.0,
            gps_velocity: 0.0,
            altimeter: 0.0,
            imu_rate: 0.0,
            imu_rpy: 0.0,
            pixel: 0.0,
            confidence: 0.0,
        }
    }

    /// Exact state sensors with the default detector pixel noise.
    pub fn pixel_only() -> Self {
        Self { pixel: Self::default().pixel, ..Self::noiseless() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensorBundle {
    pub gps_position: WorldPoint,
    pub gps_velocity: Vector3<f64>,
    pub altitude: f64,
    pub imu_rates: Vector3<f64>,
    /// (roll, pitch, yaw)
    pub imu_rpy: (f64, f64, f64),
    pub timestamp: f64,
}

impl SensorBundle {
    pub fn rotation(&self) -> Matrix3<f64> {
        let (r, p, y) = self.imu_rpy;
        rpy_matrix(r, p, y)
    }

    /// Vehicle state as seen through the sensors; altitude comes from the
    /// altimeter, horizontal position from GPS.
    pub fn estimated_state(&self) -> QuadState {
        QuadState {
            r: Vector3::new(self.gps_position.x, self.gps_position.y, -self.altitude),
            v: self.gps_velocity,
            rot: self.rotation(),
            omega: self.imu_rates,
        }
    }
}

pub fn sample_sensors(quad: &QuadState, noise: &NoiseConfig, rng: &mut SimRng, timestamp: f64) -> SensorBundle {
    let mut g3 = |s: f64| Vector3::new(gauss(rng, s), gauss(rng, s), gauss(rng, s));
    let gps = quad.r + g3(noise.gps_position);
    let vel = quad.v + g3(noise.gps_velocity);
    let rates = quad.omega + g3(noise.imu_rate);
    let rpy_noise = g3(noise.imu_rpy);
    let altitude = -quad.r.z + gauss(rng, noise.altimeter);
    let (roll, pitch, yaw) = rpy_from_matrix(&quad.rot);
    SensorBundle {
        gps_position: gps.into(),
        gps_velocity: vel,
        altitude,
        imu_rates: rates,
        imu_rpy: (roll + rpy_noise.x, pitch + rpy_noise.y, yaw + rpy_noise.z),
        timestamp,
    }
}

/// Body-frame translational velocity from GPS velocity and IMU attitude.
pub fn body_velocity(bundle: &SensorBundle) -> Vector3<f64> {
    bundle.rotation().transpose() * bundle.gps_velocity
}
