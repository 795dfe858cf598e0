//! Fixed-schedule simulation loop: 2.5 ms dynamics, 10 ms control and
//! sensing, 80 ms perception frames.

use nalgebra::Vector3;

use crate::control::{path_follow, ControlGains, HoverPid};
use crate::detection::{detect_indexed, BBox, ConfidenceModel};
use crate::dynamics::{step, ControlInput, QuadParams, QuadState};
use crate::error::Result;
use crate::planning::CubicTrajectory;
use crate::raster::{render, GrayFrame};
use crate::rng::{stream, SimRng};
use crate::scenario::Scenario;
use crate::sensors::{sample_sensors, CameraIntrinsics, NoiseConfig, SensorBundle};
use crate::world::Scene;

pub const DYNAMICS_DT: f64 = 0.0025;
pub const CONTROL_DT: f64 = 0.01;
pub const FRAME_DT: f64 = 0.08;
const TICKS_PER_CONTROL: u64 = 4;
const TICKS_PER_FRAME: u64 = 32;

#[derive(Debug, Clone)]
pub enum Command {
    Hover { setpoint: Vector3<f64>, yaw: f64 },
    Path { traj: CubicTrajectory, yaw: f64 },
}

pub struct Sim {
    pub scene: Scene,
    pub quad: QuadState,
    pub params: QuadParams,
    pub gains: ControlGains,
    pub k: CameraIntrinsics,
    pub noise: NoiseConfig,
    pub model: ConfidenceModel,
    pub tick: u64,
    pub command: Command,
    /// Latest sensor reading.
    pub sensors: SensorBundle,
    /// Readings taken at each control tick of the last frame.
    pub frame_sensors: Vec<SensorBundle>,
    input: ControlInput,
    pid: HoverPid,
    rng_sensors: SimRng,
    rng_detect: SimRng,
}

impl Sim {
    pub fn new(sc: &Scenario) -> Self {
        let quad = sc.start_state();
        let mut rng_sensors = stream(sc.seed, "sensors");
        let sensors = sample_sensors(&quad, &sc.noise, &mut rng_sensors, 0.0);
        Self {
            scene: sc.scene(),
            quad,
            params: sc.quad,
            gains: sc.gains,
            k: sc.camera,
            noise: sc.noise,
            model: sc.detector,
            tick: 0,
            command: Command::Hover { setpoint: quad.r, yaw: quad.yaw() },
            sensors,
            frame_sensors: vec![sensors],
            input: ControlInput::hover(&sc.quad),
            pid: HoverPid::default(),
            rng_sensors,
            rng_detect: stream(sc.seed, "detector"),
        }
    }

    pub fn time(&self) -> f64 {
        self.tick as f64 * DYNAMICS_DT
    }

    pub fn hover_at(&mut self, setpoint: Vector3<f64>, yaw: f64) {
        self.command = Command::Hover { setpoint, yaw };
    }

    pub fn follow(&mut self, traj: CubicTrajectory, yaw: f64) {
        self.command = Command::Path { traj, yaw };
    }

    fn control(&mut self) {
        let t = self.time();
        self.sensors = sample_sensors(&self.quad, &self.noise, &mut self.rng_sensors, t);
        self.frame_sensors.push(self.sensors);
        let est = self.sensors.estimated_state();
        self.input = match &self.command {
            Command::Hover { setpoint, yaw } => {
                self.pid.update(&est, setpoint, *yaw, &self.gains, &self.params, CONTROL_DT).input
            }
            Command::Path { traj, yaw } => path_follow(&est, traj, t, *yaw, &self.gains, &self.params),
        };
    }

    /// Advance to the next perception instant.
    pub fn advance_frame(&mut self) -> Result<()> {
        self.frame_sensors.clear();
        for _ in 0..TICKS_PER_FRAME {
            if self.tick % TICKS_PER_CONTROL == 0 {
                self.control();
            }
            self.quad = step(&self.quad, &self.input, &self.params, DYNAMICS_DT)?;
            self.tick += 1;
            self.scene.time = self.time();
        }
        Ok(())
    }

    pub fn render(&self) -> GrayFrame {
        render(&self.scene, &self.quad, &self.k)
    }

    pub fn detect(&mut self, target: usize) -> Option<BBox> {
        detect_indexed(&self.scene, &self.quad, &self.k, &self.noise, &self.model, &mut self.rng_detect)
            .into_iter()
            .find(|(i, _)| *i == target)
            .map(|(_, b)| b)
    }

    /// Position estimate averaged over the last frame's readings.
    pub fn mean_position(&self) -> Vector3<f64> {
        let n = self.frame_sensors.len().max(1) as f64;
        self.frame_sensors.iter().map(|s| s.estimated_state().r).sum::<Vector3<f64>>() / n
    }

    pub fn mean_velocity(&self) -> Vector3<f64> {
        let n = self.frame_sensors.len().max(1) as f64;
        self.frame_sensors.iter().map(|s| s.gps_velocity).sum::<Vector3<f64>>() / n
    }

    pub fn mean_altitude(&self) -> f64 {
        let n = self.frame_sensors.len().max(1) as f64;
        self.frame_sensors.iter().map(|s| s.altitude).sum::<f64>() / n
    }

    /// Roll and pitch averaged over the last frame's readings.
    pub fn mean_tilt(&self) -> (f64, f64) {
        let n = self.frame_sensors.len().max(1) as f64;
        let (r, p) = self.frame_sensors.iter().fold((0.0, 0.0), |(r, p), s| (r + s.imu_rpy.0, p + s.imu_rpy.1));
        (r / n, p / n)
    }

    pub fn yaw(&self) -> f64 {
        self.sensors.imu_rpy.2
    }
}
