//! Camera-frame EKF for a static surface point seen by a moving camera.
//!
//! Process: `ẋ = −ω × x − v_c`. Measurement: pinhole projection of `x`.

use nalgebra::{Matrix2, Matrix2x3, Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::dynamics::{exp_so3, hat};
use crate::sensors::{CameraIntrinsics, PixelPoint};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EkfParams {
    /// Continuous process noise density, m²/s.
    pub q_c: [f64; 3],
    /// Pixel measurement variance, px².
    pub pixel_var: [f64; 2],
    /// Initial covariance, m².
    pub p0: [f64; 3],
    /// Chi-square gate on the innovation (2 dof).
    pub gate: f64,
    /// Smallest admissible depth, m.
    pub min_depth: f64,
}

impl Default for EkfParams {
    fn default() -> Self {
        Self { q_c: [0.01; 3], pixel_var: [1.0, 1.0], p0: [4.0, 1.0, 1.0], gate: 9.21, min_depth: 0.1 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EkfState {
    pub x: Vector3<f64>,
    pub p: Matrix3<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EkfInputs {
    pub omega: Vector3<f64>,
    pub v_c: Vector3<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UpdateInfo {
    pub innovation: Vector2<f64>,
    /// Squared Mahalanobis distance of the innovation.
    pub nis: f64,
    pub accepted: bool,
    /// Depth hit the floor and was clamped.
    pub floored: bool,
}

impl EkfState {
    /// Initial state from a depth guess and the pixel where the point is seen.
    pub fn init(depth: f64, pixel: &PixelPoint, k: &CameraIntrinsics, params: &EkfParams) -> Self {
        let x = Vector3::new(
            depth,
            (pixel.u - k.cx) * depth / k.focal_length,
            (pixel.v - k.cy) * depth / k.focal_length,
        );
        Self { x, p: Matrix3::from_diagonal(&Vector3::from(params.p0)) }
    }

    pub fn depth_std(&self) -> f64 {
        self.p[(0, 0)].max(0.0).sqrt()
    }

    pub fn is_valid(&self, params: &EkfParams) -> bool {
        self.x.iter().all(|v| v.is_finite())
            && self.x.x >= params.min_depth
            && self.p.symmetric_eigen().eigenvalues.min() > 0.0
    }
}

/// `∫₀^dt exp(−hat(ω)τ) dτ` in closed form.
pub fn integrated_rotation(omega: &Vector3<f64>, dt: f64) -> Matrix3<f64> {
    let w = omega.norm();
    let om = hat(omega);
    let om2 = om * om;
    let th = w * dt;
    if th < 1e-4 {
        Matrix3::identity() * dt - om * (dt * dt / 2.0) + om2 * (dt * dt * dt / 6.0)
    } else {
        Matrix3::identity() * dt - om * ((1.0 - th.cos()) / (w * w)) + om2 * ((dt - th.sin() / w) / (w * w))
    }
}

pub fn ekf_predict(s: &EkfState, inp: &EkfInputs, dt: f64, params: &EkfParams) -> EkfState {
    assert!(dt > 0.0 && dt <= 0.1 + 1e-12, "ekf_predict dt {dt} outside (0, 0.1]");
    let f = exp_so3(&(-inp.omega * dt));
    let x = f * s.x - integrated_rotation(&inp.omega, dt) * inp.v_c;
    let q = Matrix3::from_diagonal(&(Vector3::from(params.q_c) * dt));
    let p = f * s.p * f.transpose() + q;
    EkfState { x, p: (p + p.transpose()) * 0.5 }
}

pub fn measurement(x: &Vector3<f64>, k: &CameraIntrinsics) -> Vector2<f64> {
    Vector2::new(
        (x.y * k.focal_length + x.x * k.cx) / x.x,
        (x.z * k.focal_length + x.x * k.cy) / x.x,
    )
}

pub fn measurement_jacobian(x: &Vector3<f64>, k: &CameraIntrinsics) -> Matrix2x3<f64> {
    let f = k.focal_length;
    let x2 = x.x * x.x;
    Matrix2x3::new(-f * x.y / x2, f / x.x, 0.0, -f * x.z / x2, 0.0, f / x.x)
}

pub fn ekf_update(s: &EkfState, meas: &PixelPoint, k: &CameraIntrinsics, params: &EkfParams) -> (EkfState, UpdateInfo) {
    let z = Vector2::new(meas.u, meas.v);
    let x = Vector3::new(s.x.x.max(params.min_depth), s.x.y, s.x.z);
    let h = measurement_jacobian(&x, k);
    let r = Matrix2::from_diagonal(&Vector2::from(params.pixel_var));
    let innovation = z - measurement(&x, k);
    let sm = h * s.p * h.transpose() + r;
    let Some(s_inv) = sm.try_inverse() else {
        return (*s, UpdateInfo { innovation, nis: f64::INFINITY, accepted: false, floored: false });
    };
    let nis = (innovation.transpose() * s_inv * innovation)[(0, 0)];
    if !z.iter().all(|v| v.is_finite()) || nis > params.gate {
        return (*s, UpdateInfo { innovation, nis, accepted: false, floored: false });
    }
    let gain = s.p * h.transpose() * s_inv;
    let mut xn = s.x + gain * innovation;
    let ikh = Matrix3::identity() - gain * h;
    let p = ikh * s.p * ikh.transpose() + gain * r * gain.transpose();
    let floored = xn.x < params.min_depth;
    if floored {
        xn.x = params.min_depth;
    }
    (EkfState { x: xn, p: (p + p.transpose()) * 0.5 }, UpdateInfo { innovation, nis, accepted: true, floored })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{gauss, stream};
    use proptest::prelude::*;

    fn rk4_oracle(x0: Vector3<f64>, inp: &EkfInputs, dt: f64, steps: usize) -> Vector3<f64> {
        let f = |x: &Vector3<f64>| -inp.omega.cross(x) - inp.v_c;
        let h = dt / steps as f64;
        let mut x = x0;
        for _ in 0..steps {
            let k1 = f(&x);
            let k2 = f(&(x + k1 * (h / 2.0)));
            let k3 = f(&(x + k2 * (h / 2.0)));
            let k4 = f(&(x + k3 * h));
            x += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
        }
        x
    }

    fn state(x: Vector3<f64>) -> EkfState {
        EkfState { x, p: Matrix3::from_diagonal(&Vector3::new(4.0, 1.0, 1.0)) }
    }

    #[test]
    fn predict_examples() {
        let p = EkfParams::default();
        let s = state(Vector3::new(20.0, 1.0, -2.0));
        let still = EkfInputs { omega: Vector3::zeros(), v_c: Vector3::zeros() };
        assert_eq!(ekf_predict(&s, &still, 0.08, &p).x, s.x);
        let fwd = EkfInputs { omega: Vector3::zeros(), v_c: Vector3::new(1.0, 0.0, 0.0) };
        assert!((ekf_predict(&s, &fwd, 0.08, &p).x - Vector3::new(19.92, 1.0, -2.0)).norm() < 1e-12);
        let yaw = EkfInputs { omega: Vector3::new(0.0, 0.0, 0.5), v_c: Vector3::zeros() };
        let mut x = s;
        for _ in 0..10 {
            x = ekf_predict(&x, &yaw, 0.1, &p);
        }
        assert!((x.x.norm() - s.x.norm()).abs() < 1e-9);
        assert!((x.x - rk4_oracle(s.x, &yaw, 1.0, 4000)).norm() < 1e-9);
        let expected = exp_so3(&Vector3::new(0.0, 0.0, -0.5)) * s.x;
        assert!((x.x - expected).norm() < 1e-9);
    }

    proptest! {
        #[test]
        fn exact_discretization_matches_rk4(
            wx in -0.57f64..0.57, wy in -0.57f64..0.57, wz in -0.57f64..0.57,
            vx in -5.0f64..5.0, vy in -5.0f64..5.0, vz in -5.0f64..5.0,
            x in 1.0f64..100.0, y in -20.0f64..20.0, z in -20.0f64..20.0,
        ) {
            let inp = EkfInputs { omega: Vector3::new(wx, wy, wz), v_c: Vector3::new(vx, vy, vz) };
            let s = state(Vector3::new(x, y, z));
            let got = ekf_predict(&s, &inp, 0.08, &EkfParams::default()).x;
            prop_assert!((got - rk4_oracle(s.x, &inp, 0.08, 200)).norm() < 1e-6);
        }

        #[test]
        fn jacobian_matches_central_differences(x in 2.0f64..100.0, y in -30.0f64..30.0, z in -30.0f64..30.0) {
            let k = CameraIntrinsics::default();
            let p = Vector3::new(x, y, z);
            let h = measurement_jacobian(&p, &k);
            for j in 0..3 {
                let mut e = Vector3::zeros();
                e[j] = 1e-5 * p.norm();
                let d = (measurement(&(p + e), &k) - measurement(&(p - e), &k)) / (2.0 * e[j]);
                for i in 0..2 {
                    prop_assert!((d[i] - h[(i, j)]).abs() <= 1e-4 * h[(i, j)].abs().max(1e-3));
                }
            }
        }
    }

    #[test]
    fn jacobian_at_reference_point() {
        let k = CameraIntrinsics::default();
        let p = Vector3::new(10.0, 1.0, -2.0);
        let h = measurement_jacobian(&p, &k);
        assert!((h[(0, 0)] + 3.2).abs() < 1e-12 && (h[(0, 1)] - 32.0).abs() < 1e-12);
        assert!((h[(1, 0)] - 6.4).abs() < 1e-12 && (h[(1, 2)] - 32.0).abs() < 1e-12);
    }

    #[test]
    fn update_at_prediction() {
        let k = CameraIntrinsics::default();
        let p = EkfParams::default();
        let s = state(Vector3::new(30.0, 2.0, -3.0));
        let m = measurement(&s.x, &k);
        let (n, info) = ekf_update(&s, &PixelPoint::new(m.x, m.y), &k, &p);
        assert!(info.accepted && info.nis.abs() < 1e-12);
        assert!((n.x - s.x).norm() < 1e-12);
        assert!(n.p.trace() < s.p.trace());
    }

    #[test]
    fn gate_rejects_outliers() {
        let k = CameraIntrinsics::default();
        let p = EkfParams::default();
        let s = EkfState { x: Vector3::new(30.0, 0.0, 0.0), p: Matrix3::identity() * 0.01 };
        let (n, info) = ekf_update(&s, &PixelPoint::new(420.0, 240.0), &k, &p);
        assert!(!info.accepted && info.nis > 9.21);
        assert_eq!(n, s);
    }

    #[test]
    fn init_back_projects_pixel() {
        let k = CameraIntrinsics::default();
        let s = EkfState::init(40.0, &PixelPoint::new(352.0, 208.0), &k, &EkfParams::default());
        assert!((s.x - Vector3::new(40.0, 4.0, -4.0)).norm() < 1e-12);
        let m = measurement(&s.x, &k);
        assert!((m.x - 352.0).abs() < 1e-9 && (m.y - 208.0).abs() < 1e-9);
    }

    /// Camera drifting sideways past a static point, with some yaw wobble.
    fn truth_inputs(t: f64) -> EkfInputs {
        EkfInputs {
            omega: Vector3::new(0.0, 0.0, 0.05 * (0.7 * t).sin()),
            v_c: Vector3::new(0.8, 2.0 * (0.4 * t).cos(), 0.5 * (0.3 * t).sin()),
        }
    }

    fn run(seed: u64, x_true0: Vector3<f64>, s0: EkfState) -> (Vec<f64>, Vec<f64>, f64, f64) {
        let k = CameraIntrinsics::default();
        let params = EkfParams::default();
        let mut rng = stream(seed, "ekf");
        let mut truth = x_true0;
        let mut s = s0;
        let start_err = (s.x.x - truth.x).abs();
        let mut nees = Vec::new();
        let mut std = Vec::new();
        for tick in 1..=1500 {
            let t = tick as f64 * 0.01;
            let inp = truth_inputs(t);
            truth = rk4_oracle(truth, &inp, 0.01, 4);
            s = ekf_predict(&s, &inp, 0.01, &params);
            if tick % 8 == 0 {
                let z = measurement(&truth, &k);
                let meas = PixelPoint::new(z.x + gauss(&mut rng, 1.0), z.y + gauss(&mut rng, 1.0));
                s = ekf_update(&s, &meas, &k, &params).0;
                let e = s.x - truth;
                nees.push((e.transpose() * s.p.try_inverse().unwrap() * e)[(0, 0)]);
                std.push(s.depth_std());
            }
        }
        (nees, std, start_err, (s.x.x - truth.x).abs())
    }

    #[test]
    fn depth_error_shrinks_and_std_decreases() {
        // seeded on the measured ray with a wrong depth, as the mission does
        let k = CameraIntrinsics::default();
        let truth = Vector3::new(30.0, 1.0, -1.0);
        let z = measurement(&truth, &k);
        let s0 = EkfState::init(32.0, &PixelPoint::new(z.x, z.y), &k, &EkfParams::default());
        let (_, std, e0, e1) = run(1, truth, s0);
        assert!(e1 < e0, "start {e0} end {e1}");
        // 5 s windows at 12.5 updates per second
        for i in 0..std.len().saturating_sub(62) {
            assert!(std[i + 62] < std[i]);
        }
    }

    #[test]
    fn monte_carlo_nees_is_consistent() {
        let params = EkfParams::default();
        let mut total = 0.0;
        let mut count = 0usize;
        for seed in 0..50 {
            let mut rng = stream(seed, "init");
            let e = Vector3::new(
                gauss(&mut rng, params.p0[0].sqrt()),
                gauss(&mut rng, params.p0[1].sqrt()),
                gauss(&mut rng, params.p0[2].sqrt()),
            );
            let truth = Vector3::new(30.0, 1.0, -1.0);
            let s0 = EkfState { x: truth + e, p: Matrix3::from_diagonal(&Vector3::from(params.p0)) };
            let (nees, ..) = run(seed + 100, truth, s0);
            total += nees.iter().sum::<f64>();
            count += nees.len();
        }
        let mean = total / count as f64;
        assert!((1.0..=6.0).contains(&mean), "mean NEES {mean}");
    }
}
