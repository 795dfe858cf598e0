use nalgebra::Vector3;

use super::sim::{Sim, CONTROL_DT, FRAME_DT};
use super::*;
use crate::control::{pbvs_collect, pbvs_command, PbvsEstimator};
use crate::detection::{fit_blade_model, fit_rotor_disk_corrected, predict_time_to_peak};
use crate::ekf::{ekf_predict, ekf_update, EkfInputs, EkfState};
use crate::planning::{choose_duration, default_a_max, plan_cubic, BoundaryConditions};
use crate::raster::{canny, disk_mask, frame_difference, union_masks, CannyParams, GrayFrame, LkParams};
use crate::rng::{gauss, stream, SimRng};
use crate::sensors::{body_velocity, level_pixel};
use crate::tracking::PointTracker;

/// Failure reason carried to the report.
type Step<T> = std::result::Result<T, String>;

fn fail(tag: &str) -> impl Fn(Error) -> String + '_ {
    move |e| format!("{tag}: {e}")
}

/// Hover tilt below which the camera counts as level, rad.
const SETTLED_TILT: f64 = 0.003;
/// Duration of each 1 m climb between λ samples, s.
const LAMBDA_HOP_TIME: f64 = 1.5;

/// Extra pixels around the fitted rotor disk kept out of the tracker: the
/// coarsest LK window must not see the blades.
fn rotor_margin(lk: &LkParams) -> f64 {
    (lk.half_window << (lk.levels.max(1) - 1)) as f64 + 2.0
}

/// Rotor disk relative to the tracked point, for keeping seeds off the blades.
#[derive(Clone, Copy)]
struct RotorExclusion {
    hub_offset: PixelPoint,
    radius: f64,
    /// EKF depth when the offset was measured.
    depth: f64,
}

/// Last rotor-top measurement, extrapolated between fits with λ and the
/// altimeter.
#[derive(Clone, Copy)]
struct RowReference {
    v: f64,
    altitude: f64,
    lambda: f64,
}

/// Blade periods per rotor-disk measurement; a third covers the full disk.
const ROTOR_SWEEP_PERIODS: f64 = 1.0;

struct Sweep {
    frames: Vec<GrayFrame>,
    /// Differences of consecutive frames.
    masks: Vec<GrayFrame>,
    /// Mean roll and pitch while each frame was taken.
    tilts: Vec<(f64, f64)>,
    altitude: f64,
    /// Detections, when asked for.
    boxes: Vec<BBox>,
}

impl Sweep {
    /// Rotor disk in level-camera pixels: each difference mask is corrected
    /// by the tilt of its frame pair before the joint circle fit.
    fn rotor(&self, k: &CameraIntrinsics) -> Step<RotorSample> {
        let (hub, radius) = fit_rotor_disk_corrected(&self.masks, |i, (u, v)| {
            let (r0, p0) = self.tilts[i];
            let (r1, p1) = self.tilts[i + 1];
            let q = level_pixel(&PixelPoint::new(u, v), 0.5 * (r0 + r1), 0.5 * (p0 + p1), k);
            (q.u, q.v)
        })
        .map_err(fail("blade-fit"))?;
        Ok(RotorSample { hub, radius, top_v: hub.v - radius, altitude: self.altitude })
    }

    fn union(&self) -> Step<GrayFrame> {
        union_masks(&self.masks).ok_or_else(|| "blade-fit: no motion masks".to_string())
    }
}

/// Rotor disk seen from one hover.
#[derive(Clone, Copy)]
struct RotorSample {
    hub: PixelPoint,
    radius: f64,
    /// Row of the disk top as a level camera would see it.
    top_v: f64,
    altitude: f64,
}

struct Runner<'a> {
    sc: &'a Scenario,
    cfg: MissionConfig,
    sim: Sim,
    target: usize,
    kind: ObjectKind,
    report: MissionReport,
    tracker: Option<PointTracker>,
    prev_frame: Option<GrayFrame>,
    rotor: Option<RotorExclusion>,
    row_ref: Option<RowReference>,
    ekf: Option<EkfState>,
    rng_pixel: SimRng,
    on_frame: Option<&'a mut dyn FnMut(&GrayFrame)>,
}

/// Run one mission to completion or failure. Never panics on mission errors;
/// the reason ends up in `outcome`.
pub fn run_mission(sc: &Scenario) -> MissionReport {
    run(sc, None)
}

/// [`run_mission`] that also hands every rendered perception frame to
/// `on_frame`. Rendering does not touch any random stream, so the report is
/// identical to an unobserved run.
pub fn run_mission_observed(sc: &Scenario, on_frame: &mut dyn FnMut(&GrayFrame)) -> MissionReport {
    run(sc, Some(on_frame))
}

fn run<'a>(sc: &'a Scenario, on_frame: Option<&'a mut dyn FnMut(&GrayFrame)>) -> MissionReport {
    let target = sc.target_index().unwrap_or(0);
    let sim = Sim::new(sc);
    let obj = &sim.scene.objects[target];
    let report = MissionReport {
        scenario: sc.name.clone(),
        seed: sc.seed,
        target: obj.kind,
        outcome: MissionPhase::Detect,
        phases: Vec::new(),
        height_truth: obj.height_truth,
        height: None,
        depth: None,
        depth_truth_initial: None,
        depth_truth_final: None,
        active: None,
        blade: None,
        lambda: None,
        confidence_log: Vec::new(),
        pixel_error_log: Vec::new(),
        depth_log: Vec::new(),
        climb_log: Vec::new(),
        trace: Vec::new(),
        sim_time: 0.0,
    };
    let mut r = Runner {
        sc,
        cfg: sc.mission,
        kind: obj.kind,
        sim,
        target,
        report,
        tracker: None,
        prev_frame: None,
        rotor: None,
        row_ref: None,
        ekf: None,
        rng_pixel: stream(sc.seed, "pixel"),
        on_frame,
    };
    let outcome = match r.execute() {
        Ok(()) => MissionPhase::Done,
        Err(reason) => MissionPhase::Failed(reason),
    };
    r.enter(outcome.clone());
    r.report.outcome = outcome;
    r.report.sim_time = r.sim.time();
    r.report
}

impl Runner<'_> {
    fn enter(&mut self, phase: MissionPhase) {
        let t = self.sim.time();
        if let Some((_, span)) = self.report.phases.last_mut() {
            span.end = t;
        }
        self.report.phases.push((phase, PhaseSpan { start: t, end: t }));
    }

    fn execute(&mut self) -> Step<()> {
        self.enter(MissionPhase::Detect);
        let (history, first) = self.detect_phase()?;
        let bbox = if self.kind == ObjectKind::WindTurbine {
            self.enter(MissionPhase::ActiveInference);
            self.active_inference(&history, first)?
        } else {
            first
        };
        self.enter(MissionPhase::PlanarApproach);
        self.planar_approach(bbox)?;
        // the whole object is in view where the approach ended
        let approach_end = self.hold_position();
        self.enter(MissionPhase::Climb);
        let height = match self.kind {
            ObjectKind::ElectricTower => self.contour_climb()?,
            ObjectKind::WindTurbine => {
                self.coarse_climb()?;
                self.enter(MissionPhase::LambdaEstimation);
                let est = self.lambda_estimation()?;
                self.enter(MissionPhase::BladeAlign);
                self.blade_align(&est)?
            }
        };
        self.report.height = Some(height);
        self.enter(MissionPhase::HeightMeasure);
        self.enter(MissionPhase::DepthEstimate);
        if self.kind == ObjectKind::WindTurbine {
            self.move_to(approach_end, self.sim.yaw())?;
        }
        let x0 = self.depth_estimate(&height)?;
        self.enter(MissionPhase::TrajectoryTrack);
        self.trajectory_track(x0)
    }

    // ---- simulation plumbing ----

    /// One perception frame: advance the world, then update tracker and EKF.
    fn frame(&mut self) -> Step<()> {
        self.sim.advance_frame().map_err(fail("dynamics"))?;
        let t = self.sim.time();
        if t > self.cfg.max_time {
            return Err(format!("timeout: mission exceeded {} s", self.cfg.max_time));
        }
        if let Some(sink) = self.on_frame.as_mut() {
            sink(&self.sim.render());
        }
        let est = self.sim.sensors.estimated_state();
        self.report.trace.push(TraceSample {
            t,
            truth: self.sim.quad.position(),
            estimate: est.position(),
            yaw: self.sim.yaw(),
        });
        if let Some(r) = self.row_ref {
            let v = r.v + r.lambda * (self.sim.mean_altitude() - r.altitude);
            self.report.pixel_error_log.push((t, v - self.sim.k.cy));
        }
        if let Some(mut tracker) = self.tracker.take() {
            let frame = self.sim.render();
            let prev = self.prev_frame.take().expect("tracking keeps the previous frame");
            let exclude = self.rotor.map(|r| self.rotor_mask(&tracker, r));
            let target = self.target;
            let sim = &mut self.sim;
            let out = tracker
                .step(&prev, &frame, FRAME_DT, exclude.as_ref(), || sim.detect(target).map(|b| b.padded(2.0)))
                .map_err(fail("tracking-lost"))?;
            self.prev_frame = Some(frame);
            self.tracker = Some(tracker);
            if let Some(ekf) = self.ekf.take() {
                self.ekf = Some(self.ekf_frame(ekf, out.representative)?);
            }
        }
        Ok(())
    }

    fn ekf_frame(&mut self, mut ekf: EkfState, rep: PixelPoint) -> Step<EkfState> {
        let p = &self.sc.ekf;
        for s in &self.sim.frame_sensors {
            let inp = EkfInputs { omega: s.imu_rates, v_c: body_velocity(s) };
            ekf = ekf_predict(&ekf, &inp, CONTROL_DT, p);
        }
        let sigma = self.sc.noise.pixel;
        let meas = PixelPoint::new(rep.u + gauss(&mut self.rng_pixel, sigma), rep.v + gauss(&mut self.rng_pixel, sigma));
        let (ekf, _) = ekf_update(&ekf, &meas, &self.sim.k, p);
        if !ekf.is_valid(p) {
            return Err("ekf: state left the valid region".into());
        }
        let truth = plane_depth(&self.sim.scene.objects[self.target], &self.sim.quad, &rep, &self.sim.k);
        self.report.depth_log.push(DepthSample { t: self.sim.time(), estimate: ekf.x.x, std: ekf.depth_std(), truth });
        Ok(ekf)
    }

    /// Rotor disk around the hub predicted from the tracked point, scaled by
    /// the EKF depth change.
    fn rotor_mask(&self, tracker: &PointTracker, r: RotorExclusion) -> GrayFrame {
        let scale = self.ekf.filter(|e| e.x.x > 0.0).map_or(1.0, |e| r.depth / e.x.x);
        let rep = tracker.representative;
        let hub = PixelPoint::new(rep.u + r.hub_offset.u * scale, rep.v + r.hub_offset.v * scale);
        let k = &self.sim.k;
        disk_mask(k.width, k.height, &hub, r.radius * scale, self.sim.time())
    }

    fn detect(&mut self) -> Option<BBox> {
        let b = self.sim.detect(self.target)?;
        self.report.confidence_log.push((self.sim.time(), b.confidence));
        Some(b)
    }

    fn detect_required(&mut self) -> Step<BBox> {
        self.detect().ok_or_else(|| "target-lost: no detection".to_string())
    }

    /// Hover at `sp` until the averaged estimate is still and close, after at
    /// least `dwell` seconds.
    fn settle(&mut self, sp: Vector3<f64>, yaw: f64, dwell: f64) -> Step<()> {
        self.sim.hover_at(sp, yaw);
        let mut elapsed = 0.0;
        loop {
            self.frame()?;
            elapsed += FRAME_DT;
            let (roll, pitch) = self.sim.mean_tilt();
            let close = (self.sim.mean_position() - sp).norm() < 0.15
                && self.sim.mean_velocity().norm() < 0.1
                && roll.abs().max(pitch.abs()) < SETTLED_TILT;
            if elapsed >= dwell && (close || elapsed > dwell + 20.0) {
                return Ok(());
            }
        }
    }

    /// Fly a rest-to-rest cubic to `target`; `stop` is asked after every frame.
    /// Returns whether `stop` ended the flight early. The vehicle hovers
    /// where it ended.
    fn fly_to(
        &mut self,
        target: Vector3<f64>,
        yaw: f64,
        stop: impl FnMut(&mut Self) -> Step<bool>,
    ) -> Step<bool> {
        self.fly_to_within(target, yaw, 0.0, stop)
    }

    /// [`Self::fly_to`] taking at least `min_dur` seconds. Short hops at the
    /// acceleration limit leave the camera swinging for seconds.
    fn fly_to_within(
        &mut self,
        target: Vector3<f64>,
        yaw: f64,
        min_dur: f64,
        mut stop: impl FnMut(&mut Self) -> Step<bool>,
    ) -> Step<bool> {
        let start = self.sim.mean_position();
        let bc = BoundaryConditions::rest_to_rest(start.into(), target.into());
        let t0 = self.sim.time();
        let dur = choose_duration(&bc, default_a_max(&self.sim.params)).max(min_dur);
        let traj = plan_cubic(&bc, t0, t0 + dur).map_err(fail("planning"))?;
        self.sim.follow(traj, yaw);
        while self.sim.time() < t0 + dur {
            self.frame()?;
            if stop(self)? {
                let here = self.sim.mean_position();
                self.sim.hover_at(here, yaw);
                return Ok(true);
            }
        }
        self.sim.hover_at(target, yaw);
        Ok(false)
    }

    fn move_to(&mut self, target: Vector3<f64>, yaw: f64) -> Step<()> {
        self.fly_to(target, yaw, |_| Ok(false))?;
        self.settle(target, yaw, self.cfg.settle_dwell)
    }

    fn hold_position(&self) -> Vector3<f64> {
        match &self.sim.command {
            sim::Command::Hover { setpoint, .. } => *setpoint,
            sim::Command::Path { .. } => self.sim.mean_position(),
        }
    }

    // ---- phases ----

    fn detect_phase(&mut self) -> Step<(Vec<(f64, f64)>, BBox)> {
        let frames = ((self.cfg.detect_window / FRAME_DT).round() as usize).max(1);
        let mut history = Vec::with_capacity(frames);
        let mut last = None;
        for _ in 0..frames {
            self.frame()?;
            if let Some(b) = self.detect() {
                history.push((b.timestamp, b.confidence));
                last = Some(b);
            }
        }
        last.map(|b| (history, b)).ok_or_else(|| "target-not-detected".to_string())
    }

    /// Wait for the frame closest to the predicted confidence peak.
    fn active_inference(&mut self, history: &[(f64, f64)], fallback: BBox) -> Step<BBox> {
        let prediction = match predict_time_to_peak(history) {
            Ok(p) => p,
            Err(Error::NoPeriodicity(_)) | Err(Error::InsufficientData(_)) => return Ok(fallback),
            Err(e) => return Err(fail("active-inference")(e)),
        };
        let frames = (prediction.dt_next_peak / FRAME_DT).round() as usize;
        for _ in 0..frames {
            self.frame()?;
        }
        let b = self.detect_required()?;
        self.report.active = Some(ActiveRecord {
            predicted_wait: prediction.dt_next_peak,
            waited: frames as f64 * FRAME_DT,
            period: prediction.period,
            confidence: b.confidence,
        });
        Ok(b)
    }

    fn planar_approach(&mut self, mut bbox: BBox) -> Step<()> {
        let area = self.sim.k.frame_area();
        let ratio = self.cfg.stop_ratio(self.kind);
        for k in 0..self.cfg.max_approach_steps {
            if proximity_stop_at(&bbox, area, ratio) {
                return Ok(());
            }
            let yaw = self.sim.yaw() + desired_yaw(&bbox, &self.sim.k);
            let pos = self.hold_position();
            let sp = approach_setpoint(k, yaw, &pos.into(), self.cfg.step_unit);
            let stopped = self.fly_to(sp.vec(), yaw, |m| {
                Ok(m.detect().is_some_and(|b| proximity_stop_at(&b, area, ratio)))
            })?;
            let hold = self.hold_position();
            self.settle(hold, yaw, self.cfg.settle_dwell)?;
            bbox = self.detect_required()?;
            if stopped {
                return Ok(());
            }
        }
        if proximity_stop_at(&bbox, area, ratio) {
            Ok(())
        } else {
            Err(format!("approach-limit: {} steps without reaching the stop ratio", self.cfg.max_approach_steps))
        }
    }

    /// Mean row of the central top contour point over a few hover frames.
    fn measure_top(&mut self) -> Step<(f64, f64)> {
        let canny_params = CannyParams::default();
        let (mut sum_v, mut sum_alt, mut n, mut lost) = (0.0, 0.0, 0, 0);
        while n < 3 {
            self.frame()?;
            let top = self.detect().and_then(|b| {
                let frame = self.sim.render();
                let edges = canny(&frame, &b.padded(6.0), &canny_params);
                select_contour_top(&edges.points, self.sim.k.cx)
            });
            match top {
                Some(p) => {
                    sum_v += p.v;
                    sum_alt += self.sim.mean_altitude();
                    n += 1;
                    lost = 0;
                }
                None => {
                    lost += 1;
                    if lost >= self.cfg.contour_lost_frames {
                        return Err("contour-lost".into());
                    }
                }
            }
        }
        Ok((sum_v / n as f64, sum_alt / n as f64))
    }

    /// Doubling vertical steps, bisection once the top has been overshot.
    fn contour_climb(&mut self) -> Step<HeightEstimate> {
        let v0 = self.sim.k.cy;
        let yaw = self.sim.yaw();
        let (mut lo, mut hi): (Option<f64>, Option<f64>) = (None, None);
        let mut k = 0;
        for _ in 0..self.cfg.max_climb_iterations {
            let (v_top, alt) = self.measure_top()?;
            self.report.climb_log.push(ClimbSample { t: self.sim.time(), altitude: alt, v_top });
            let e = v_top - v0;
            if e.abs() <= self.cfg.align_tolerance_px {
                let b = self.detect_required()?;
                let f = self.sim.k.focal_length;
                // the correction needs a depth; iterate height -> depth -> height
                let mut depth = f * alt / b.h;
                let mut height = alt;
                for _ in 0..4 {
                    height = height_from_alignment(-alt, v_top, v0, depth, f);
                    depth = f * height / b.h;
                }
                return Ok(HeightEstimate {
                    object_height: height,
                    method: HeightMethod::ContourAlign,
                    samples: self.report.climb_log.len(),
                    z_w: -alt,
                    v_top,
                    depth_used: depth,
                });
            }
            let step = |k: &mut i32| {
                let s = self.cfg.step_unit * 2f64.powi(*k);
                *k += 1;
                s
            };
            let next = if e < 0.0 {
                lo = Some(alt);
                match hi {
                    Some(h) => (alt + h) / 2.0,
                    None => alt + step(&mut k),
                }
            } else {
                hi = Some(alt);
                match lo {
                    Some(l) => (l + alt) / 2.0,
                    None => (alt - step(&mut k)).max(1.0),
                }
            };
            let hold = self.hold_position();
            self.move_to(Vector3::new(hold.x, hold.y, -next), yaw)?;
        }
        Err("climb-limit: no alignment".into())
    }

    /// Turbines: climb by doubling steps until the box top nears the
    /// principal row; the fine alignment uses the blade model.
    fn coarse_climb(&mut self) -> Step<()> {
        let limit = self.sim.k.cy - self.cfg.coarse_margin_px;
        let yaw = self.sim.yaw();
        for k in 0..self.cfg.max_climb_iterations as i32 {
            let b = self.detect_required()?;
            if b.top() >= limit {
                return Ok(());
            }
            let hold = self.hold_position();
            let sp = Vector3::new(hold.x, hold.y, hold.z - self.cfg.step_unit * 2f64.powi(k));
            let stopped = self.fly_to(sp, yaw, |m| Ok(m.detect().is_some_and(|b| b.top() >= limit)))?;
            let hold = self.hold_position();
            self.settle(hold, yaw, self.cfg.settle_dwell)?;
            if stopped {
                return Ok(());
            }
        }
        Err("climb-limit: box top never reached the principal row".into())
    }


    fn blade_period(&self) -> f64 {
        self.report
            .active
            .map(|a| a.period)
            .or_else(|| self.sim.scene.objects[self.target].blade_period())
            .unwrap_or(1.0)
    }

    /// Hover frames over `periods` blade periods with their differences,
    /// tilts and the mean altimeter reading.
    fn sweep(&mut self, periods: f64, detect: bool) -> Step<Sweep> {
        let n = ((periods * self.blade_period() / FRAME_DT).ceil() as usize + 1).clamp(6, 200);
        let mut frames = Vec::with_capacity(n);
        let mut tilts = Vec::with_capacity(n);
        let mut alt = 0.0;
        let mut boxes = Vec::new();
        for _ in 0..n {
            self.frame()?;
            frames.push(self.sim.render());
            tilts.push(self.sim.mean_tilt());
            alt += self.sim.mean_altitude();
            if detect {
                boxes.extend(self.detect());
            }
        }
        let masks = frames
            .windows(2)
            .map(|w| frame_difference(&w[1], &w[0], self.cfg.diff_threshold))
            .collect::<crate::error::Result<Vec<_>>>()
            .map_err(fail("blade-fit"))?;
        Ok(Sweep { frames, masks, tilts, altitude: alt / n as f64, boxes })
    }

    /// Rotor disk from a short hover sweep.
    fn measure_rotor(&mut self) -> Step<RotorSample> {
        self.sweep(ROTOR_SWEEP_PERIODS, false)?.rotor(&self.sim.k)
    }

    /// Climb in unit steps, measuring the rotor top row at each hover, until
    /// the pixels-per-meter ratio settles.
    fn lambda_estimation(&mut self) -> Step<PbvsEstimator> {
        let t_start = self.sim.time();
        let yaw = self.sim.yaw();
        let v0 = self.sim.k.cy;
        let mut est = PbvsEstimator::new(self.cfg.lambda_samples, self.cfg.lambda_tolerance);
        let sw = self.sweep(self.cfg.blade_fit_periods, false)?;
        let model = fit_blade_model(&sw.union()?, &sw.frames).map_err(fail("blade-fit"))?;
        self.report.blade = Some(model);
        // same sweep length as every later sample so fit biases cancel
        let mut sample = self.measure_rotor()?;
        loop {
            pbvs_collect(&mut est, sample.top_v, v0, sample.altitude);
            if est.converged {
                break;
            }
            if self.sim.time() - t_start > self.cfg.lambda_timeout {
                return Err(format!("lambda-timeout: {} samples", est.samples.len()));
            }
            let hold = self.hold_position();
            let sp = Vector3::new(hold.x, hold.y, hold.z - self.cfg.lambda_step);
            self.fly_to_within(sp, yaw, LAMBDA_HOP_TIME, |_| Ok(false))?;
            self.settle(sp, yaw, self.cfg.lambda_dwell)?;
            sample = self.measure_rotor()?;
        }
        let t = self.sim.time();
        let k = self.sim.k;
        let truth = plane_depth(&self.sim.scene.objects[self.target], &self.sim.quad, &PixelPoint::new(k.cx, k.cy), &k);
        self.report.lambda = Some(LambdaRecord {
            lambda: est.lambda,
            lambda_truth: k.focal_length / truth,
            duration: t - t_start,
            converged_at: t,
            history: est.history.clone(),
        });
        Ok(est)
    }

    /// Servo the rotor top onto the principal row with the learned ratio.
    fn blade_align(&mut self, est: &PbvsEstimator) -> Step<HeightEstimate> {
        let v0 = self.sim.k.cy;
        let yaw = self.sim.yaw();
        for _ in 0..self.cfg.max_climb_iterations {
            let RotorSample { top_v: y_p, altitude: alt, .. } = self.measure_rotor()?;
            self.row_ref = Some(RowReference { v: y_p, altitude: alt, lambda: est.lambda });
            if (y_p - v0).abs() <= self.cfg.align_tolerance_px {
                self.row_ref = None;
                let f = self.sim.k.focal_length;
                let depth = f / est.lambda;
                return Ok(HeightEstimate {
                    object_height: height_from_alignment(-alt, y_p, v0, depth, f),
                    method: HeightMethod::BladeAlign,
                    samples: est.samples.len(),
                    z_w: -alt,
                    v_top: y_p,
                    depth_used: depth,
                });
            }
            let z = pbvs_command(est, -alt, y_p, v0).map_err(fail("pbvs"))?;
            let hold = self.hold_position();
            self.settle(Vector3::new(hold.x, hold.y, z), yaw, self.cfg.settle_dwell)?;
        }
        Err("align-limit: pixel error did not converge".into())
    }

    /// Depth from the height and a fresh box, then start tracking and the EKF
    /// on the tracked point.
    fn depth_estimate(&mut self, height: &HeightEstimate) -> Step<f64> {
        // the box height follows the blade angle; take the median over a
        // sweep rather than whatever angle one frame happens to catch
        let (frame, rotor, mut boxes) = if self.kind == ObjectKind::WindTurbine {
            let sw = self.sweep(ROTOR_SWEEP_PERIODS, true)?;
            let r = sw.rotor(&self.sim.k)?;
            (self.sim.render(), Some(r), sw.boxes)
        } else {
            self.frame()?;
            (self.sim.render(), None, Vec::new())
        };
        boxes.sort_by(|a, b| a.h.total_cmp(&b.h));
        let bbox = match boxes.get(boxes.len() / 2) {
            Some(b) => b.clone(),
            None => self.detect_required()?,
        };
        let x0 = depth_from_height(height, &bbox, &self.sim.k).map_err(fail("depth"))?;
        let k = self.sim.k;
        // blades and mast share a gray level, so passing blades erase mast
        // edges without showing up in the difference mask: skip the disk
        let margin = rotor_margin(&LkParams::default());
        let exclude = rotor.map(|m| disk_mask(k.width, k.height, &m.hub, m.radius + margin, frame.timestamp));
        let tracker = PointTracker::init(
            &frame,
            &bbox.padded(2.0),
            self.sc.tracker,
            CannyParams::default(),
            LkParams::default(),
            exclude.as_ref(),
        )
        .map_err(fail("tracking-lost"))?;
        let rep = tracker.representative;
        self.rotor = rotor.map(|m| RotorExclusion {
            hub_offset: PixelPoint::new(m.hub.u - rep.u, m.hub.v - rep.v),
            radius: m.radius + margin,
            depth: x0,
        });
        self.tracker = Some(tracker);
        self.prev_frame = Some(frame);
        self.ekf = Some(EkfState::init(x0, &rep, &k, &self.sc.ekf));
        let truth = plane_depth(&self.sim.scene.objects[self.target], &self.sim.quad, &rep, &k);
        self.report.depth_truth_initial = Some(truth);
        self.report.depth = Some(DepthEstimate { x_c_initial: x0, x_c_refined: x0 });
        Ok(x0)
    }

    /// Fly toward the estimated point for the tracking window with the EKF running.
    fn trajectory_track(&mut self, x0: f64) -> Step<()> {
        let yaw = self.sim.yaw();
        let dir = Vector3::new(yaw.cos(), yaw.sin(), 0.0);
        let start = self.hold_position();
        let end = start + dir * (x0 - self.cfg.standoff).max(0.0);
        let bc = BoundaryConditions::rest_to_rest(start.into(), end.into());
        let t0 = self.sim.time();
        // a rest-to-rest cubic peaks at 1.5 times its mean speed
        let slow = 1.5 * bc.distance() / self.cfg.track_speed;
        let dur = choose_duration(&bc, default_a_max(&self.sim.params)).max(slow);
        let traj = plan_cubic(&bc, t0, t0 + dur).map_err(fail("planning"))?;
        self.sim.follow(traj, yaw);
        while self.sim.time() < t0 + self.cfg.track_duration - 1e-9 {
            if self.sim.time() >= t0 + dur {
                self.sim.hover_at(end, yaw);
            }
            self.frame()?;
        }
        let ekf = self.ekf.expect("ekf running");
        if let Some(d) = self.report.depth.as_mut() {
            d.x_c_refined = ekf.x.x;
        }
        self.report.depth_truth_final = self.report.depth_log.last().map(|s| s.truth);
        Ok(())
    }
}
