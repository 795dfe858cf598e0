//! Flight control: geometric path following with per-direction gains on the
//! trajectory's Frenet frame, a hover PID, and the pixel-based vertical
//! servo that learns the pixels-per-meter ratio while climbing.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::dynamics::{vee, ControlInput, QuadParams, QuadState};
use crate::error::{Error, Result};
use crate::planning::CubicTrajectory;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PidGains {
    pub kp: [f64; 3],
    pub ki: [f64; 3],
    pub kd: [f64; 3],
    /// Clamp on each integrator state, m·s.
    pub integrator_limit: f64,
    /// The integrator only runs while the error on that axis is inside this band, m.
    pub integration_band: f64,
}

impl Default for PidGains {
    fn default() -> Self {
        Self {
            kp: [2.0, 2.0, 6.0],
            ki: [0.5, 0.5, 3.0],
            kd: [2.4, 2.4, 4.0],
            integrator_limit: 2.0,
            integration_band: 0.3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControlGains {
    /// Position gains along (tangent, normal, binormal), 1/s².
    pub k_pos: [f64; 3],
    /// Velocity gains along (tangent, normal, binormal), 1/s.
    pub k_vel: [f64; 3],
    pub k_r: f64,
    pub k_omega: f64,
    pub hover_pid: PidGains,
}

impl Default for ControlGains {
    fn default() -> Self {
        Self { k_pos: [2.0, 4.0, 4.0], k_vel: [2.0, 3.0, 3.0], k_r: 4.0, k_omega: 0.4, hover_pid: PidGains::default() }
    }
}

impl ControlGains {
    pub fn validate(&self) -> Result<()> {
        let p = &self.hover_pid;
        let all = self
            .k_pos
            .iter()
            .chain(&self.k_vel)
            .chain(&p.kp)
            .chain(&p.ki)
            .chain(&p.kd)
            .chain([&self.k_r, &self.k_omega]);
        let mut ok = true;
        for g in all {
            ok &= g.is_finite() && *g >= 0.0;
        }
        if ok && p.integrator_limit > 0.0 && p.integration_band > 0.0 {
            Ok(())
        } else {
            Err(Error::Config("gains must be non-negative and the integrator limit positive".into()))
        }
    }
}

/// Telemetry of one controller evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlReport {
    pub input: ControlInput,
    /// Position error along the controller's three directions.
    pub errors: Vector3<f64>,
    pub thrust_saturated: bool,
    pub torque_saturated: bool,
}

/// Desired attitude from a commanded thrust direction and yaw.
pub fn desired_attitude(thrust_dir_down: &Vector3<f64>, yaw: f64) -> Matrix3<f64> {
    let b3 = thrust_dir_down.normalize();
    let b1c = Vector3::new(yaw.cos(), yaw.sin(), 0.0);
    let mut b2 = b3.cross(&b1c);
    if b2.norm() < 1e-9 {
        b2 = b3.cross(&Vector3::new(-yaw.sin(), yaw.cos(), 0.0)).cross(&b3);
    }
    let b2 = b2.normalize();
    let b1 = b2.cross(&b3);
    Matrix3::from_columns(&[b1, b2, b3])
}

pub fn attitude_error(rot: &Matrix3<f64>, rot_des: &Matrix3<f64>) -> Vector3<f64> {
    vee(&(rot_des.transpose() * rot - rot.transpose() * rot_des)) * 0.5
}

/// Thrust and torques that realize a world-frame acceleration command.
/// Drag is fed forward; thrust is the projection on the current body axis.
pub fn track_acceleration(
    state: &QuadState,
    a_des: &Vector3<f64>,
    yaw: f64,
    gains: &ControlGains,
    params: &QuadParams,
) -> (ControlInput, bool, bool) {
    let g = QuadParams::z_g() * params.gravity;
    let a_thrust = a_des - g - params.drag_accel(&state.rot, &state.v);
    // thrust acts along −b3, so the body z axis points against a_thrust
    let mut down = -a_thrust;
    if down.norm() < 1e-9 {
        down = QuadParams::z_g();
    }
    let rot_des = desired_attitude(&down, yaw);
    let b3 = state.rot.column(2).into_owned();
    let raw_thrust = -params.mass * a_thrust.dot(&b3);
    let thrust = raw_thrust.clamp(0.0, params.thrust_max);
    let e_r = attitude_error(&state.rot, &rot_des);
    let raw = -e_r * gains.k_r - state.omega * gains.k_omega;
    let torques = raw.map(|t| t.clamp(-params.torque_max, params.torque_max));
    (ControlInput { thrust, torques }, thrust != raw_thrust, torques != raw)
}

/// Orthonormal (tangent, normal, binormal) frame for the trajectory at `t`.
pub fn frenet_frame(traj: &CubicTrajectory, t: f64) -> Matrix3<f64> {
    let s = traj.eval(t);
    let chord = traj.end_position() - traj.eval(traj.t0).position;
    let tangent = if s.velocity.norm() > 1e-6 {
        s.velocity.normalize()
    } else if chord.norm() > 1e-9 {
        chord.normalize()
    } else {
        return Matrix3::identity();
    };
    let a_perp = s.acceleration - tangent * s.acceleration.dot(&tangent);
    let normal = if a_perp.norm() > 1e-6 {
        let n = a_perp.normalize();
        (n - tangent * n.dot(&tangent)).normalize()
    } else {
        let n = Vector3::z().cross(&tangent);
        if n.norm() > 1e-9 {
            n.normalize()
        } else {
            tangent.cross(&Vector3::x()).normalize()
        }
    };
    let binormal = tangent.cross(&normal);
    Matrix3::from_columns(&[tangent, normal, binormal])
}

/// Feedback acceleration from errors decomposed in `frame`.
pub fn projected_feedback(
    frame: &Matrix3<f64>,
    e_pos: &Vector3<f64>,
    e_vel: &Vector3<f64>,
    gains: &ControlGains,
) -> (Vector3<f64>, Vector3<f64>) {
    let mut a = Vector3::zeros();
    let mut comps = Vector3::zeros();
    for i in 0..3 {
        let d = frame.column(i).into_owned();
        let (ep, ev) = (e_pos.dot(&d), e_vel.dot(&d));
        comps[i] = ep;
        a -= d * (gains.k_pos[i] * ep + gains.k_vel[i] * ev);
    }
    (a, comps)
}

pub fn path_follow_report(
    state: &QuadState,
    traj: &CubicTrajectory,
    t: f64,
    yaw: f64,
    gains: &ControlGains,
    params: &QuadParams,
) -> ControlReport {
    let s = traj.eval(t);
    let frame = frenet_frame(traj, t);
    let (fb, errors) = projected_feedback(&frame, &(state.r - s.position), &(state.v - s.velocity), gains);
    let (input, ts, qs) = track_acceleration(state, &(s.acceleration + fb), yaw, gains, params);
    ControlReport { input, errors, thrust_saturated: ts, torque_saturated: qs }
}

pub fn path_follow(
    state: &QuadState,
    traj: &CubicTrajectory,
    t: f64,
    yaw: f64,
    gains: &ControlGains,
    params: &QuadParams,
) -> ControlInput {
    path_follow_report(state, traj, t, yaw, gains, params).input
}

/// Integrator state of the hover controller.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct HoverPid {
    pub integral: Vector3<f64>,
}

impl HoverPid {
    pub fn reset(&mut self) {
        self.integral = Vector3::zeros();
    }

    pub fn update(
        &mut self,
        state: &QuadState,
        setpoint: &Vector3<f64>,
        yaw: f64,
        gains: &ControlGains,
        params: &QuadParams,
        dt: f64,
    ) -> ControlReport {
        assert!(dt > 0.0, "hover_pid needs dt > 0");
        let p = &gains.hover_pid;
        let e = setpoint - state.r;
        let mut a = Vector3::zeros();
        for i in 0..3 {
            if e[i].abs() < p.integration_band {
                self.integral[i] = (self.integral[i] + e[i] * dt).clamp(-p.integrator_limit, p.integrator_limit);
            }
            a[i] = p.kp[i] * e[i] + p.ki[i] * self.integral[i] - p.kd[i] * state.v[i];
        }
        let (input, ts, qs) = track_acceleration(state, &a, yaw, gains, params);
        ControlReport { input, errors: -e, thrust_saturated: ts, torque_saturated: qs }
    }
}

pub fn hover_pid(
    pid: &mut HoverPid,
    state: &QuadState,
    setpoint: &Vector3<f64>,
    yaw: f64,
    gains: &ControlGains,
    params: &QuadParams,
    dt: f64,
) -> ControlInput {
    pid.update(state, setpoint, yaw, gains, params, dt).input
}

/// Online estimate of the pixels-per-meter ratio from paired changes in the
/// target's image row and the altimeter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PbvsEstimator {
    pub lambda: f64,
    /// Accepted `(Δpixel, Δaltitude)` pairs.
    pub samples: Vec<(f64, f64)>,
    /// Running λ after each accepted sample.
    pub history: Vec<f64>,
    pub m_required: usize,
    pub tolerance: f64,
    pub converged: bool,
    last: Option<(f64, f64)>,
}

impl Default for PbvsEstimator {
    fn default() -> Self {
        Self::new(5, 0.02)
    }
}

impl PbvsEstimator {
    pub fn new(m_required: usize, tolerance: f64) -> Self {
        Self {
            lambda: f64::NAN,
            samples: Vec::new(),
            history: Vec::new(),
            m_required: m_required.max(1),
            tolerance,
            converged: false,
            last: None,
        }
    }

    /// Depth implied by λ for focal length `f`.
    pub fn depth(&self, focal_length: f64) -> Option<f64> {
        (self.lambda.is_finite() && self.lambda > 0.0).then(|| focal_length / self.lambda)
    }
}

/// Minimum altitude change that counts as a sample, m.
pub const MIN_ALTITUDE_STEP: f64 = 1e-3;

/// Record one completed vertical setpoint. Returns whether a sample was added.
pub fn pbvs_collect(est: &mut PbvsEstimator, y_p: f64, v_0: f64, altitude: f64) -> bool {
    let offset = y_p - v_0;
    let Some((prev_off, prev_alt)) = est.last.replace((offset, altitude)) else {
        return false;
    };
    let d_alt = altitude - prev_alt;
    if d_alt.abs() < MIN_ALTITUDE_STEP {
        // keep the older reference so the next climb pairs with it
        est.last = Some((prev_off, prev_alt));
        return false;
    }
    let d_pix = offset - prev_off;
    est.samples.push((d_pix, d_alt));
    let n = est.samples.len() as f64;
    est.lambda = est.samples.iter().map(|(p, a)| p / a).sum::<f64>() / n;
    est.history.push(est.lambda);
    let m = est.m_required;
    if est.history.len() >= m {
        let tail = &est.history[est.history.len() - m..];
        let lo = tail.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = tail.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mean = tail.iter().sum::<f64>() / m as f64;
        est.converged = mean.abs() > 0.0 && (hi - lo) / mean.abs() < est.tolerance;
    }
    true
}

/// Vertical setpoint that moves the target row onto `v_0`.
pub fn pbvs_command(est: &PbvsEstimator, z_w: f64, y_p: f64, v_0: f64) -> Result<f64> {
    if !est.converged {
        return Err(Error::EstimatorNotReady(format!("{} of {} samples", est.samples.len(), est.m_required)));
    }
    Ok(z_w + (y_p - v_0) / est.lambda)
}
