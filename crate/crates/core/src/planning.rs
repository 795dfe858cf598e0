//! Minimum-acceleration cubic trajectories.
//!
//! Each axis is a cubic in `τ = t − t0`. The coefficients minimize
//! `∫ ‖r̈‖² dτ = cᵀ G c` under the four boundary constraints, solved through
//! the KKT system and cross-checked against direct interpolation.

use nalgebra::{SMatrix, SVector, Vector3, Vector4};

use crate::dynamics::QuadParams;
use crate::error::{Error, Result};
use crate::world::WorldPoint;

/// Shortest duration handed out by [`choose_duration`], s.
pub const MIN_DURATION: f64 = 0.5;
/// Cruise speed used to seed the duration search, m/s.
pub const CRUISE_SPEED: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundaryConditions {
    pub p0: WorldPoint,
    pub pf: WorldPoint,
    pub v0: Vector3<f64>,
    pub vf: Vector3<f64>,
}

impl BoundaryConditions {
    pub fn rest_to_rest(p0: WorldPoint, pf: WorldPoint) -> Self {
        Self { p0, pf, v0: Vector3::zeros(), vf: Vector3::zeros() }
    }

    pub fn distance(&self) -> f64 {
        (self.pf.vec() - self.p0.vec()).norm()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CubicTrajectory {
    /// One `(c0, c1, c2, c3)` per axis.
    pub coeffs: [Vector4<f64>; 3],
    pub t0: f64,
    pub tf: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectorySample {
    pub position: Vector3<f64>,
    pub velocity: Vector3<f64>,
    pub acceleration: Vector3<f64>,
    /// The query time fell outside `[t0, tf]` and was clamped.
    pub clamped: bool,
}

/// Gram matrix of `b(τ) = [0, 0, 2, 6τ]` over `[0, T]`.
pub fn gram(duration: f64) -> SMatrix<f64, 4, 4> {
    let t = duration;
    let mut g = SMatrix::<f64, 4, 4>::zeros();
    g[(2, 2)] = 4.0 * t;
    g[(2, 3)] = 6.0 * t * t;
    g[(3, 2)] = 6.0 * t * t;
    g[(3, 3)] = 12.0 * t * t * t;
    g
}

fn constraints(t: f64) -> SMatrix<f64, 4, 4> {
    SMatrix::<f64, 4, 4>::new(
        1.0, 0.0, 0.0, 0.0, //
        0.0, 1.0, 0.0, 0.0, //
        1.0, t, t * t, t * t * t, //
        0.0, 1.0, 2.0 * t, 3.0 * t * t,
    )
}

/// Minimum-acceleration coefficients for one axis from the KKT system of the
/// quadratic program; `rhs` is `(p0, v0, pf, vf)`.
pub fn solve_kkt(t: f64, rhs: &Vector4<f64>) -> Option<Vector4<f64>> {
    let g = gram(t);
    let a = constraints(t);
    let mut k = SMatrix::<f64, 8, 8>::zeros();
    k.fixed_view_mut::<4, 4>(0, 0).copy_from(&(g * 2.0));
    k.fixed_view_mut::<4, 4>(0, 4).copy_from(&a.transpose());
    k.fixed_view_mut::<4, 4>(4, 0).copy_from(&a);
    let mut b = SVector::<f64, 8>::zeros();
    b.fixed_rows_mut::<4>(4).copy_from(rhs);
    let sol = k.full_piv_lu().solve(&b)?;
    Some(sol.fixed_rows::<4>(0).into_owned())
}

/// Direct cubic interpolation of the boundary conditions.
pub fn interpolate(t: f64, p0: f64, v0: f64, pf: f64, vf: f64) -> Vector4<f64> {
    let d = pf - p0 - v0 * t;
    let dv = vf - v0;
    let c2 = (3.0 * d - dv * t) / (t * t);
    let c3 = (dv * t - 2.0 * d) / (t * t * t);
    Vector4::new(p0, v0, c2, c3)
}

pub fn plan_cubic(bc: &BoundaryConditions, t0: f64, tf: f64) -> Result<CubicTrajectory> {
    let t = tf - t0;
    if !(t >= 1e-6) {
        return Err(Error::DegenerateInterval(t));
    }
    let (p0, pf) = (bc.p0.vec(), bc.pf.vec());
    let mut coeffs = [Vector4::zeros(); 3];
    for axis in 0..3 {
        let rhs = Vector4::new(p0[axis], bc.v0[axis], pf[axis], bc.vf[axis]);
        let c = solve_kkt(t, &rhs).ok_or(Error::DegenerateInterval(t))?;
        let direct = interpolate(t, rhs[0], rhs[1], rhs[2], rhs[3]);
        let scale = 1.0 + rhs.amax();
        assert!(
            (c - direct).amax() <= 1e-9 * scale * (1.0 + 1.0 / (t * t * t)),
            "KKT and interpolation disagree on axis {axis}"
        );
        coeffs[axis] = direct;
    }
    Ok(CubicTrajectory { coeffs, t0, tf })
}

impl CubicTrajectory {
    pub fn duration(&self) -> f64 {
        self.tf - self.t0
    }

    pub fn eval(&self, t: f64) -> TrajectorySample {
        let clamped = t < self.t0 || t > self.tf;
        let s = t.clamp(self.t0, self.tf) - self.t0;
        let mut out = TrajectorySample {
            position: Vector3::zeros(),
            velocity: Vector3::zeros(),
            acceleration: Vector3::zeros(),
            clamped,
        };
        for (axis, c) in self.coeffs.iter().enumerate() {
            out.position[axis] = c[0] + s * (c[1] + s * (c[2] + s * c[3]));
            out.velocity[axis] = c[1] + s * (2.0 * c[2] + 3.0 * s * c[3]);
            out.acceleration[axis] = 2.0 * c[2] + 6.0 * s * c[3];
        }
        out
    }

    /// Acceleration cost `Σ cᵀ G c`.
    pub fn gamma(&self) -> f64 {
        let g = gram(self.duration());
        self.coeffs.iter().map(|c| (c.transpose() * g * c)[(0, 0)]).sum()
    }

    /// Largest per-axis acceleration magnitude; acceleration is linear in time,
    /// so the peak sits at an endpoint.
    pub fn peak_acceleration(&self) -> f64 {
        let t = self.duration();
        self.coeffs
            .iter()
            .map(|c| (2.0 * c[2]).abs().max((2.0 * c[2] + 6.0 * c[3] * t).abs()))
            .fold(0.0, f64::max)
    }

    pub fn end_position(&self) -> Vector3<f64> {
        self.eval(self.tf).position
    }
}

pub fn eval(traj: &CubicTrajectory, t: f64) -> TrajectorySample {
    traj.eval(t)
}

/// Default acceleration bound, well below thrust saturation.
pub fn default_a_max(params: &QuadParams) -> f64 {
    0.3 * (params.thrust_max / params.mass - params.gravity)
}

fn feasible(bc: &BoundaryConditions, t: f64, a_max: f64) -> bool {
    plan_cubic(bc, 0.0, t).is_ok_and(|tr| tr.peak_acceleration() <= a_max)
}

/// Shortest duration whose cubic respects `a_max` on every axis.
///
/// A geometric search in ×1.25 steps from `distance / CRUISE_SPEED` brackets
/// the answer, and bisection tightens it. The returned value is always on the
/// feasible side and never below [`MIN_DURATION`].
pub fn choose_duration(bc: &BoundaryConditions, a_max: f64) -> f64 {
    assert!(a_max > 0.0, "a_max must be positive");
    let mut t = (bc.distance() / CRUISE_SPEED).max(MIN_DURATION);
    let (mut lo, mut hi);
    if feasible(bc, t, a_max) {
        hi = t;
        loop {
            if hi <= MIN_DURATION {
                return MIN_DURATION;
            }
            let next = (hi / 1.25).max(MIN_DURATION);
            if !feasible(bc, next, a_max) {
                lo = next;
                break;
            }
            hi = next;
        }
    } else {
        lo = t;
        loop {
            t *= 1.25;
            if feasible(bc, t, a_max) {
                hi = t;
                break;
            }
            lo = t;
        }
    }
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if feasible(bc, mid, a_max) {
            hi = mid;
        } else {
            lo = mid;
        }
        if hi - lo <= 1e-12 * hi {
            break;
        }
    }
    hi
}

/// Chain of cubics through waypoints, continuous in position and velocity.
/// Interior velocities are central differences; the ends are at rest.
pub fn plan_waypoints(points: &[WorldPoint], t0: f64, a_max: f64) -> Result<Vec<CubicTrajectory>> {
    if points.len() < 2 {
        return Err(Error::InsufficientData("need at least two waypoints".into()));
    }
    let n = points.len();
    // durations from rest-to-rest feasibility of each leg
    let legs: Vec<f64> = points
        .windows(2)
        .map(|w| choose_duration(&BoundaryConditions::rest_to_rest(w[0], w[1]), a_max))
        .collect();
    let mut vel = vec![Vector3::zeros(); n];
    for i in 1..n - 1 {
        vel[i] = (points[i + 1].vec() - points[i - 1].vec()) / (legs[i - 1] + legs[i]);
    }
    let mut out = Vec::with_capacity(n - 1);
    let mut t = t0;
    for i in 0..n - 1 {
        let bc = BoundaryConditions { p0: points[i], pf: points[i + 1], v0: vel[i], vf: vel[i + 1] };
        let mut d = legs[i];
        while plan_cubic(&bc, 0.0, d)?.peak_acceleration() > a_max {
            d *= 1.25;
        }
        out.push(plan_cubic(&bc, t, t + d)?);
        t += d;
    }
    Ok(out)
}
