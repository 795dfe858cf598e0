//! Quadrotor rigid-body model.
//!
//! ```text
//! ṙ = v
//! v̇ = −(1/m)·R·[0,0,T]ᵀ − (1/m)·R·D·Rᵀ·v·‖v‖ + g·z_g
//! Ṙ = R·hat(ω)
//! ω̇ = I⁻¹(τ − ω × Iω)
//! ```
//!
//! Thrust acts along body −z (body z points down in NED), so a level vehicle
//! with T = m·g hovers. Integration is classic RK4 followed by a polar
//! re-orthonormalization of R.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::world::WorldPoint;

/// Skew-symmetric matrix with `hat(w) * x == w.cross(x)`.
pub fn hat(w: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -w.z, w.y, w.z, 0.0, -w.x, -w.y, w.x, 0.0)
}

/// Inverse of [`hat`] on skew-symmetric input.
pub fn vee(m: &Matrix3<f64>) -> Vector3<f64> {
    Vector3::new(m[(2, 1)], m[(0, 2)], m[(1, 0)])
}

/// Rodrigues: exp(hat(w)).
pub fn exp_so3(w: &Vector3<f64>) -> Matrix3<f64> {
    let theta = w.norm();
    let k = hat(w);
    if theta < 1e-12 {
        return Matrix3::identity() + k;
    }
    Matrix3::identity() + k * (theta.sin() / theta) + k * k * ((1.0 - theta.cos()) / (theta * theta))
}

/// Nearest rotation matrix in the Frobenius sense.
pub fn orthonormalize(m: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = m.svd(true, true);
    let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
    let mut r = u * v_t;
    if r.determinant() < 0.0 {
        let mut u2 = u;
        u2.column_mut(2).neg_mut();
        r = u2 * v_t;
    }
    r
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadState {
    pub r: Vector3<f64>,
    pub v: Vector3<f64>,
    /// body → world
    pub rot: Matrix3<f64>,
    /// body rates
    pub omega: Vector3<f64>,
}

impl QuadState {
    pub fn at_rest(position: WorldPoint, yaw: f64) -> Self {
        Self {
            r: position.vec(),
            v: Vector3::zeros(),
            rot: yaw_matrix(yaw),
            omega: Vector3::zeros(),
        }
    }

    pub fn position(&self) -> WorldPoint {
        self.r.into()
    }

    pub fn yaw(&self) -> f64 {
        self.rot[(1, 0)].atan2(self.rot[(0, 0)])
    }

    pub fn is_finite(&self) -> bool {
        self.r.iter().chain(self.v.iter()).chain(self.rot.iter()).chain(self.omega.iter()).all(|x| x.is_finite())
    }

    pub fn orthonormality_error(&self) -> f64 {
        (self.rot.transpose() * self.rot - Matrix3::identity()).norm()
    }
}

pub fn yaw_matrix(yaw: f64) -> Matrix3<f64> {
    let (s, c) = yaw.sin_cos();
    Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlInput {
    /// N, along body −z
    pub thrust: f64,
    /// N·m
    pub torques: Vector3<f64>,
}

impl ControlInput {
    pub fn hover(params: &QuadParams) -> Self {
        Self {
            thrust: params.mass * params.gravity,
            torques: Vector3::zeros(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuadParams {
    pub mass: f64,
    pub inertia: Vector3<f64>,
    pub drag: Vector3<f64>,
    pub gravity: f64,
    pub thrust_max: f64,
    pub torque_max: f64,
}

impl Default for QuadParams {
    fn default() -> Self {
        let mass = 1.0;
        let gravity = 9.81;
        Self {
            mass,
            inertia: Vector3::new(0.01, 0.01, 0.02),
            drag: Vector3::new(0.1, 0.1, 0.1),
            gravity,
            thrust_max: 4.0 * mass * gravity,
            torque_max: 0.2,
        }
    }
}

impl QuadParams {
    pub fn z_g() -> Vector3<f64> {
        Vector3::z()
    }

    /// Drag acceleration (world frame) at body attitude `rot` and velocity `v`.
    pub fn drag_accel(&self, rot: &Matrix3<f64>, v: &Vector3<f64>) -> Vector3<f64> {
        let d = Matrix3::from_diagonal(&self.drag);
        -(rot * d * rot.transpose() * v) * (v.norm() / self.mass)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.mass > 0.0
            && self.inertia.iter().all(|&i| i > 0.0)
            && self.drag.iter().all(|&d| d >= 0.0)
            && self.thrust_max > 0.0
            && self.torque_max > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config("quad params: mass and inertia must be positive, drag non-negative".into()))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StateDerivative {
    pub r_dot: Vector3<f64>,
    pub v_dot: Vector3<f64>,
    pub rot_dot: Matrix3<f64>,
    pub omega_dot: Vector3<f64>,
}

pub fn derivatives(state: &QuadState, input: &ControlInput, params: &QuadParams) -> StateDerivative {
    derivatives_with_force(state, input, params, &Vector3::zeros())
}

/// Same as [`derivatives`] with an additional external world-frame force.
pub fn derivatives_with_force(
    state: &QuadState,
    input: &ControlInput,
    params: &QuadParams,
    f_ext: &Vector3<f64>,
) -> StateDerivative {
    let thrust_vec = Vector3::new(0.0, 0.0, input.thrust);
    let v_dot = -(state.rot * thrust_vec) / params.mass
        + params.drag_accel(&state.rot, &state.v)
        + QuadParams::z_g() * params.gravity
        + f_ext / params.mass;
    let iw = state.omega.component_mul(&params.inertia);
    let omega_dot = (input.torques - state.omega.cross(&iw)).component_div(&params.inertia);
    StateDerivative {
        r_dot: state.v,
        v_dot,
        rot_dot: state.rot * hat(&state.omega),
        omega_dot,
    }
}

fn offset(s: &QuadState, d: &StateDerivative, h: f64) -> QuadState {
    QuadState {
        r: s.r + d.r_dot * h,
        v: s.v + d.v_dot * h,
        rot: s.rot + d.rot_dot * h,
        omega: s.omega + d.omega_dot * h,
    }
}

pub fn step(state: &QuadState, input: &ControlInput, params: &QuadParams, dt: f64) -> Result<QuadState> {
    step_with_force(state, input, params, dt, &Vector3::zeros())
}

pub fn step_with_force(
    state: &QuadState,
    input: &ControlInput,
    params: &QuadParams,
    dt: f64,
    f_ext: &Vector3<f64>,
) -> Result<QuadState> {
    assert!(dt > 0.0 && dt <= 0.01 + 1e-12, "integrator step must be in (0, 0.01] s");
    assert!(
        input.thrust >= 0.0 && input.thrust <= params.thrust_max * (1.0 + 1e-9),
        "thrust {} outside [0, {}]",
        input.thrust,
        params.thrust_max
    );
    let f = |s: &QuadState| derivatives_with_force(s, input, params, f_ext);
    let k1 = f(state);
    let k2 = f(&offset(state, &k1, dt / 2.0));
    let k3 = f(&offset(state, &k2, dt / 2.0));
    let k4 = f(&offset(state, &k3, dt));
    let w = dt / 6.0;
    let next = QuadState {
        r: state.r + (k1.r_dot + k2.r_dot * 2.0 + k3.r_dot * 2.0 + k4.r_dot) * w,
        v: state.v + (k1.v_dot + k2.v_dot * 2.0 + k3.v_dot * 2.0 + k4.v_dot) * w,
        rot: orthonormalize(&(state.rot + (k1.rot_dot + k2.rot_dot * 2.0 + k3.rot_dot * 2.0 + k4.rot_dot) * w)),
        omega: state.omega + (k1.omega_dot + k2.omega_dot * 2.0 + k3.omega_dot * 2.0 + k4.omega_dot) * w,
    };
    if next.is_finite() {
        Ok(next)
    } else {
        Err(Error::NumericalBlowUp(format!("non-finite state after step of {dt} s")))
    }
}
