//! Simulated detector with a blade-phase dependent confidence, the
//! time-to-next-peak predictor, and the image-plane blade model.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{projected_polygons, GrayFrame};
use crate::rng::{gauss, SimRng};
use crate::sensors::{CameraIntrinsics, NoiseConfig, PixelPoint};
use crate::world::{wrap_angle, ObjectKind, Scene};
use crate::QuadState;

const THIRD: f64 = 2.0 * PI / 3.0;
/// Smallest box side, in pixels, that still counts as a detection.
pub const MIN_BOX_PX: f64 = 4.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub u: f64,
    pub v: f64,
    pub w: f64,
    pub h: f64,
    pub confidence: f64,
    pub class: ObjectKind,
    pub timestamp: f64,
}

impl BBox {
    pub fn left(&self) -> f64 {
        self.u - self.w / 2.0
    }
    pub fn right(&self) -> f64 {
        self.u + self.w / 2.0
    }
    pub fn top(&self) -> f64 {
        self.v - self.h / 2.0
    }
    pub fn bottom(&self) -> f64 {
        self.v + self.h / 2.0
    }
    pub fn area(&self) -> f64 {
        self.w * self.h
    }
    pub fn contains(&self, p: &PixelPoint) -> bool {
        p.u >= self.left() && p.u <= self.right() && p.v >= self.top() && p.v <= self.bottom()
    }
    pub fn center(&self) -> PixelPoint {
        PixelPoint::new(self.u, self.v)
    }
    /// Box grown by `pad` pixels on every side.
    pub fn padded(&self, pad: f64) -> BBox {
        BBox { w: self.w + 2.0 * pad, h: self.h + 2.0 * pad, ..self.clone() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConfidenceModel {
    pub c_min: f64,
    pub c_max: f64,
    pub peak_value: f64,
    pub sharpness: f64,
}

impl Default for ConfidenceModel {
    fn default() -> Self {
        Self { c_min: 0.90, c_max: 0.975, peak_value: 0.974, sharpness: 8.0 }
    }
}

impl ConfidenceModel {
    /// Confidence period in seconds for a blade rate `omega`.
    pub fn period(omega: f64) -> f64 {
        THIRD / omega.abs()
    }
}

/// Angular distance from `beta` to the nearest multiple of 2π/3.
pub fn phase_distance(beta: f64) -> f64 {
    let r = beta.rem_euclid(THIRD);
    r.min(THIRD - r)
}

pub fn confidence_model(beta: f64, model: &ConfidenceModel) -> f64 {
    let d = phase_distance(beta);
    model.c_min + (model.peak_value - model.c_min) * (-model.sharpness * d * d).exp()
}

/// Detections paired with the index of the object that produced them.
pub fn detect_indexed(
    scene: &Scene,
    quad: &QuadState,
    k: &CameraIntrinsics,
    noise: &NoiseConfig,
    model: &ConfidenceModel,
    rng: &mut SimRng,
) -> Vec<(usize, BBox)> {
    let mut out = Vec::new();
    for (idx, obj) in scene.objects.iter().enumerate() {
        // draws happen unconditionally so the stream stays aligned
        let n = [gauss(rng, noise.pixel), gauss(rng, noise.pixel), gauss(rng, noise.pixel), gauss(rng, noise.pixel)];
        let nc = gauss(rng, noise.confidence);

        let polys = projected_polygons(scene, idx, quad, k, None);
        let mut umin = f64::INFINITY;
        let mut umax = f64::NEG_INFINITY;
        let mut vmin = f64::INFINITY;
        let mut vmax = f64::NEG_INFINITY;
        for p in polys.iter().flatten() {
            umin = umin.min(p.u);
            umax = umax.max(p.u);
            vmin = vmin.min(p.v);
            vmax = vmax.max(p.v);
        }
        let umin = umin.max(0.0);
        let vmin = vmin.max(0.0);
        let umax = umax.min(k.width as f64 - 1.0);
        let vmax = vmax.min(k.height as f64 - 1.0);
        if !(umax - umin >= MIN_BOX_PX && vmax - vmin >= MIN_BOX_PX) {
            continue;
        }
        let confidence = match obj.kind {
            ObjectKind::ElectricTower => model.c_max,
            ObjectKind::WindTurbine => {
                let beta = obj.blade_angle(scene.time).unwrap_or(0.0);
                (confidence_model(beta, model) + nc).clamp(model.c_min, model.c_max)
            }
        };
        out.push((
            idx,
            BBox {
                u: (umin + umax) / 2.0 + n[0],
                v: (vmin + vmax) / 2.0 + n[1],
                w: (umax - umin + n[2]).max(1.0),
                h: (vmax - vmin + n[3]).max(1.0),
                confidence,
                class: obj.kind,
                timestamp: scene.time,
            },
        ));
    }
    out
}

pub fn detect(
    scene: &Scene,
    quad: &QuadState,
    k: &CameraIntrinsics,
    noise: &NoiseConfig,
    model: &ConfidenceModel,
    rng: &mut SimRng,
) -> Vec<BBox> {
    detect_indexed(scene, quad, k, noise, model, rng).into_iter().map(|(_, b)| b).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PeakPrediction {
    pub dt_next_peak: f64,
    pub confidence_at_query: f64,
    pub period: f64,
}

const HARMONICS: usize = 4;

/// Least-squares fit of a truncated Fourier series with period `p`.
/// Returns the coefficients and the residual sum of squares.
fn harmonic_fit(t: &[f64], x: &[f64], p: f64) -> Option<(DVector<f64>, f64)> {
    let n = t.len();
    let cols = 1 + 2 * HARMONICS;
    if n <= cols {
        return None;
    }
    let a = DMatrix::from_fn(n, cols, |i, j| {
        if j == 0 {
            return 1.0;
        }
        let h = j.div_ceil(2) as f64;
        let arg = 2.0 * PI * h * t[i] / p;
        if j % 2 == 1 {
            arg.cos()
        } else {
            arg.sin()
        }
    });
    let b = DVector::from_column_slice(x);
    let coef = a.clone().svd(true, true).solve(&b, 1e-12).ok()?;
    let rss = (&a * &coef - &b).norm_squared();
    Some((coef, rss))
}

fn harmonic_eval(coef: &DVector<f64>, p: f64, t: f64) -> f64 {
    let mut s = coef[0];
    for h in 1..=HARMONICS {
        let arg = 2.0 * PI * h as f64 * t / p;
        s += coef[2 * h - 1] * arg.cos() + coef[2 * h] * arg.sin();
    }
    s
}

/// Dominant period of a uniformly sampled series: autocorrelation peak,
/// then a least-squares harmonic refinement. Errors when the series spans
/// fewer than two periods or the autocorrelation peak is below 0.5.
pub fn estimate_period(t: &[f64], x: &[f64]) -> Result<f64> {
    let n = x.len();
    if n != t.len() {
        return Err(Error::LengthMismatch(t.len(), n));
    }
    if n < 8 {
        return Err(Error::InsufficientData(format!("{n} samples")));
    }
    let dt = (t[n - 1] - t[0]) / (n - 1) as f64;
    if !(dt > 0.0) {
        return Err(Error::InsufficientData("zero time span".into()));
    }
    let mean = x.iter().sum::<f64>() / n as f64;
    let d: Vec<f64> = x.iter().map(|v| v - mean).collect();
    let var = d.iter().map(|v| v * v).sum::<f64>() / n as f64;
    if var <= 1e-14 {
        return Err(Error::NoPeriodicity(0.0));
    }
    let r = |k: usize| -> f64 { (0..n - k).map(|i| d[i] * d[i + k]).sum::<f64>() / (n - k) as f64 / var };
    let max_lag = n - 4;
    let mut k = 1;
    while k < max_lag && r(k) > 0.0 {
        k += 1;
    }
    if k >= max_lag {
        return Err(Error::NoPeriodicity(r(max_lag.max(1))));
    }
    let mut best = (k, f64::NEG_INFINITY);
    let mut seen_positive = false;
    while k < max_lag {
        let rk = r(k);
        if rk > 0.0 {
            seen_positive = true;
            if rk > best.1 {
                best = (k, rk);
            }
        } else if seen_positive {
            break;
        }
        k += 1;
    }
    if !seen_positive {
        return Err(Error::NoPeriodicity(best.1.max(0.0)));
    }
    let (kb, rb) = best;
    if rb < 0.5 {
        return Err(Error::NoPeriodicity(rb));
    }
    let mut lag = kb as f64;
    if kb + 1 < max_lag {
        let (a, b, c) = (r(kb - 1), rb, r(kb + 1));
        let den = a - 2.0 * b + c;
        if den < 0.0 {
            lag += (0.5 * (a - c) / den).clamp(-0.5, 0.5);
        }
    }
    let p0 = lag * dt;
    let span = t[n - 1] - t[0] + dt;
    if span < 2.0 * p0 * 0.98 {
        return Err(Error::InsufficientData(format!("span {span:.3} s below two periods of {p0:.3} s")));
    }
    Ok(refine_period(t, x, p0))
}

fn refine_period(t: &[f64], x: &[f64], p0: f64) -> f64 {
    let t0 = t[0];
    let tr: Vec<f64> = t.iter().map(|v| v - t0).collect();
    let cost = |p: f64| harmonic_fit(&tr, x, p).map(|(_, r)| r).unwrap_or(f64::INFINITY);
    let (lo, hi) = (0.85 * p0, 1.15 * p0);
    let steps = 120;
    let mut best = (p0, cost(p0));
    for i in 0..=steps {
        let p = lo + (hi - lo) * i as f64 / steps as f64;
        let c = cost(p);
        if c < best.1 {
            best = (p, c);
        }
    }
    // golden section on the bracketing cell
    let h = (hi - lo) / steps as f64;
    let (mut a, mut b) = (best.0 - h, best.0 + h);
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (cost(c), cost(d));
    for _ in 0..60 {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = cost(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = cost(d);
        }
    }
    (a + b) / 2.0
}

/// Time until the next confidence maximum, from a uniformly sampled history
/// of `(timestamp, confidence)` pairs. The query time is the last timestamp.
pub fn predict_time_to_peak(history: &[(f64, f64)]) -> Result<PeakPrediction> {
    let t: Vec<f64> = history.iter().map(|h| h.0).collect();
    let x: Vec<f64> = history.iter().map(|h| h.1).collect();
    let p = estimate_period(&t, &x)?;
    let n = t.len();
    let t_now = t[n - 1];
    let tr: Vec<f64> = t.iter().map(|v| v - t_now).collect();
    let (coef, _) = harmonic_fit(&tr, &x, p).ok_or_else(|| Error::FitFailed("harmonic fit".into()))?;

    // anchor: most recent sampled local maximum
    let mut anchor = tr[n - 1];
    for i in (1..n - 1).rev() {
        if x[i] >= x[i - 1] && x[i] >= x[i + 1] && x[i] > x.iter().sum::<f64>() / n as f64 {
            anchor = tr[i];
            break;
        }
    }
    // refine the anchor to the fitted curve's maximum within half a period
    let samples = 400;
    let mut best = (anchor, f64::NEG_INFINITY);
    for i in 0..=samples {
        let s = anchor - p / 2.0 + p * i as f64 / samples as f64;
        let v = harmonic_eval(&coef, p, s);
        if v > best.1 {
            best = (s, v);
        }
    }
    let mut step = p / samples as f64;
    for _ in 0..30 {
        step /= 2.0;
        for cand in [best.0 - step, best.0 + step] {
            let v = harmonic_eval(&coef, p, cand);
            if v > best.1 {
                best = (cand, v);
            }
        }
    }
    let since = (0.0 - best.0).rem_euclid(p);
    let dt = (p - since).rem_euclid(p);
    Ok(PeakPrediction { dt_next_peak: dt.clamp(0.0, p), confidence_at_query: x[n - 1], period: p })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActiveDetection {
    pub bbox: BBox,
    pub waited: f64,
    pub prediction: Option<PeakPrediction>,
}

/// Wait for the predicted confidence peak while hovering at `quad`, then
/// detect again. Targets without periodic confidence are detected at once.
#[allow(clippy::too_many_arguments)]
pub fn active_detect(
    scene: &Scene,
    quad: &QuadState,
    k: &CameraIntrinsics,
    noise: &NoiseConfig,
    model: &ConfidenceModel,
    history: &[(f64, f64)],
    target: usize,
    rng: &mut SimRng,
) -> Result<ActiveDetection> {
    let prediction = match predict_time_to_peak(history) {
        Ok(p) => Some(p),
        Err(Error::NoPeriodicity(_)) => None,
        Err(e) => return Err(e),
    };
    let waited = prediction.map_or(0.0, |p| p.dt_next_peak);
    let later = crate::world::advance_scene(scene, waited);
    let bbox = detect_indexed(&later, quad, k, noise, model, rng)
        .into_iter()
        .find(|(i, _)| *i == target)
        .map(|(_, b)| b)
        .ok_or_else(|| Error::TrackingLost("target not visible after wait".into()))?;
    Ok(ActiveDetection { bbox, waited, prediction })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BladeModel {
    pub beta: f64,
    pub omega_beta: f64,
    pub blade_len_px: f64,
    pub hub_px: PixelPoint,
    /// Time at which `beta` holds.
    pub timestamp: f64,
}

impl BladeModel {
    pub fn at(&self, t: f64) -> BladeModel {
        BladeModel { beta: wrap_angle(self.beta + self.omega_beta * (t - self.timestamp)), timestamp: t, ..*self }
    }
    /// Image row of the rotor disk top.
    pub fn top_v(&self) -> f64 {
        self.hub_px.v - self.blade_len_px
    }
}

pub fn blade_tip(model: &BladeModel) -> PixelPoint {
    PixelPoint::new(
        model.hub_px.u + model.blade_len_px * model.beta.sin(),
        model.hub_px.v - model.blade_len_px * model.beta.cos(),
    )
}

/// Bins closer to the hub than the fitted radius minus this are gaps
/// between sampled blade positions.
const TIP_GAP_PX: f64 = 1.5;

/// Algebraic (Kasa) circle fit: returns center and radius.
fn fit_circle(pts: &[(f64, f64)]) -> Option<((f64, f64), f64)> {
    if pts.len() < 3 {
        return None;
    }
    let a = DMatrix::from_fn(pts.len(), 3, |i, j| match j {
        0 => pts[i].0,
        1 => pts[i].1,
        _ => 1.0,
    });
    let b = DVector::from_fn(pts.len(), |i, _| pts[i].0 * pts[i].0 + pts[i].1 * pts[i].1);
    let s = a.svd(true, true).solve(&b, 1e-12).ok()?;
    let (cx, cy) = (s[0] / 2.0, s[1] / 2.0);
    let r2 = s[2] + cx * cx + cy * cy;
    (r2 > 0.0).then(|| ((cx, cy), r2.sqrt()))
}

/// Outer boundary of the masks around `center`, one point per angular bin,
/// skipping the downward sector where the mast hides blade motion. Pixels of
/// mask `i` pass through `correct(i, ·)` first.
fn outer_boundary(
    masks: &[GrayFrame],
    correct: &impl Fn(usize, (f64, f64)) -> (f64, f64),
    center: (f64, f64),
    bins: usize,
) -> Vec<(f64, f64)> {
    let mut far = vec![None::<(f64, f64, f64)>; bins];
    for (i, mask) in masks.iter().enumerate() {
        for v in 0..mask.height {
            for u in 0..mask.width {
                if mask.get(u, v) == 0 {
                    continue;
                }
                let (x, y) = correct(i, (u as f64, v as f64));
                let (dx, dy) = (x - center.0, y - center.1);
                let r = dx.hypot(dy);
                let ang = dy.atan2(dx).rem_euclid(2.0 * PI);
                let b = ((ang / (2.0 * PI)) * bins as f64) as usize % bins;
                if far[b].is_none_or(|f| r > f.2) {
                    far[b] = Some((x, y, r));
                }
            }
        }
    }
    far.into_iter()
        .enumerate()
        .filter_map(|(i, f)| {
            let ang = (i as f64 + 0.5) / bins as f64 * 2.0 * PI;
            // image v grows downward, so "down" is +π/2
            let down = (ang - PI / 2.0).abs() < 0.45;
            if down {
                None
            } else {
                f.map(|f| (f.0, f.1))
            }
        })
        .collect()
}

/// Hub and blade length from the swept-motion mask alone. A third of a
/// blade period of frames already covers the whole disk.
pub fn fit_rotor_disk(motion_mask: &GrayFrame) -> Result<(PixelPoint, f64)> {
    fit_rotor_disk_corrected(std::slice::from_ref(motion_mask), |_, p| p)
}

/// Rotor disk from several motion masks whose pixel coordinates are mapped
/// by `correct(i, p)` before fitting, e.g. to undo per-frame camera tilt.
pub fn fit_rotor_disk_corrected(
    masks: &[GrayFrame],
    correct: impl Fn(usize, (f64, f64)) -> (f64, f64),
) -> Result<(PixelPoint, f64)> {
    let (mut su, mut sv, mut count) = (0.0, 0.0, 0usize);
    for (i, mask) in masks.iter().enumerate() {
        for v in 0..mask.height {
            for u in 0..mask.width {
                if mask.get(u, v) != 0 {
                    let (x, y) = correct(i, (u as f64, v as f64));
                    su += x;
                    sv += y;
                    count += 1;
                }
            }
        }
    }
    if count < 50 {
        return Err(Error::FitFailed(format!("only {count} motion pixels")));
    }
    let mut center = (su / count as f64, sv / count as f64);
    let mut radius = 0.0;
    for _ in 0..3 {
        let mut pts = outer_boundary(masks, &correct, center, 120);
        let ((cx, cy), r) = fit_circle(&pts).ok_or_else(|| Error::FitFailed("circle fit".into()))?;
        (center, radius) = ((cx, cy), r);
        // bins that fall between sampled blade positions only reach the
        // tapered blade body; drop them and refit on the tips
        for _ in 0..3 {
            pts.retain(|p| (p.0 - center.0).hypot(p.1 - center.1) > radius - TIP_GAP_PX);
            let ((cx, cy), r) = fit_circle(&pts).ok_or_else(|| Error::FitFailed("circle fit".into()))?;
            (center, radius) = ((cx, cy), r);
        }
    }
    if !(radius > 3.0) {
        return Err(Error::FitFailed(format!("radius {radius}")));
    }
    Ok((PixelPoint::new(center.0, center.1), radius))
}

/// Fit the image-plane blade model from the swept-motion mask and the
/// frame sequence that produced it (uniformly spaced in time).
pub fn fit_blade_model(motion_mask: &GrayFrame, frames: &[GrayFrame]) -> Result<BladeModel> {
    let (hub, radius) = fit_rotor_disk(motion_mask)?;

    // topmost moving-blade pixel per frame
    let mut times = Vec::new();
    let mut tops = Vec::new();
    let mut betas = Vec::new();
    for f in frames {
        let mut top: Option<(f64, f64)> = None;
        let v_lo = (hub.v - radius * 1.1).floor().max(0.0) as usize;
        let v_hi = (hub.v - 0.3 * radius).ceil().clamp(0.0, f.height as f64) as usize;
        'rows: for v in v_lo..v_hi {
            let u_lo = (hub.u - radius).floor().max(0.0) as usize;
            let u_hi = (hub.u + radius).ceil().clamp(0.0, f.width as f64 - 1.0) as usize;
            let mut acc = (0.0, 0usize);
            for u in u_lo..=u_hi {
                if motion_mask.get(u, v) != 0 && f.get(u, v) == crate::raster::FOREGROUND {
                    acc.0 += u as f64;
                    acc.1 += 1;
                }
            }
            if acc.1 > 0 {
                top = Some((acc.0 / acc.1 as f64, v as f64));
                break 'rows;
            }
        }
        let (tu, tv) = top.unwrap_or((hub.u, hub.v - 0.3 * radius));
        times.push(f.timestamp);
        tops.push(tv);
        betas.push((tu - hub.u).atan2(hub.v - tv));
    }
    let period = estimate_period(&times, &tops)?;
    // rotation sense from the drift of the top blade's angle
    let mut drift = Vec::new();
    for w in betas.windows(2) {
        if w[0].abs() < PI / 4.0 && w[1].abs() < PI / 4.0 {
            drift.push(w[1] - w[0]);
        }
    }
    drift.sort_by(f64::total_cmp);
    let sense = if drift.is_empty() || drift[drift.len() / 2] >= 0.0 { 1.0 } else { -1.0 };
    let omega_beta = sense * THIRD / period;
    let beta = *betas.last().ok_or_else(|| Error::FitFailed("no frames".into()))?;
    Ok(BladeModel {
        beta,
        omega_beta,
        blade_len_px: radius,
        hub_px: hub,
        timestamp: frames.last().map_or(0.0, |f| f.timestamp),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::{frame_difference, render, union_masks};
    use crate::rng::stream;
    use crate::sensors::{project, world_to_camera};
    use crate::world::{advance_scene, SceneObject, TurbineParams, WorldPoint};

    fn turbine_scene(omega: f64) -> Scene {
        let params = TurbineParams { blade_angular_velocity: omega, ..TurbineParams::default() };
        Scene::new(vec![SceneObject::turbine(WorldPoint::new(120.0, 0.0, 0.0), params, PI)])
    }

    fn quad() -> QuadState {
        QuadState::at_rest(WorldPoint::new(0.0, 0.0, -52.0), 0.0)
    }

    #[test]
    fn confidence_examples() {
        let m = ConfidenceModel::default();
        assert!((confidence_model(0.0, &m) - 0.974).abs() < 1e-12);
        assert!((confidence_model(THIRD, &m) - 0.974).abs() < 1e-12);
        assert!((confidence_model(PI / 3.0, &m) - 0.90).abs() < 1e-3);
    }

    proptest::proptest! {
        #[test]
        fn confidence_range_and_period(beta in -20.0f64..20.0) {
            let m = ConfidenceModel::default();
            let c = confidence_model(beta, &m);
            proptest::prop_assert!(c >= m.c_min && c <= m.peak_value);
            proptest::prop_assert!((c - confidence_model(beta + THIRD, &m)).abs() < 1e-9);
        }

        #[test]
        fn blade_tip_on_circle(beta in -10.0f64..10.0, l in 1.0f64..300.0, hu in 0.0f64..640.0, hv in 0.0f64..480.0) {
            let m = BladeModel { beta, omega_beta: 1.0, blade_len_px: l, hub_px: PixelPoint::new(hu, hv), timestamp: 0.0 };
            let t = blade_tip(&m);
            proptest::prop_assert!(((t.u - hu).hypot(t.v - hv) - l).abs() < 1e-9);
        }
    }

    #[test]
    fn blade_tip_examples() {
        let mut m = BladeModel { beta: 0.0, omega_beta: 1.0, blade_len_px: 100.0, hub_px: PixelPoint::new(320.0, 300.0), timestamp: 0.0 };
        let t = blade_tip(&m);
        assert!((t.u - 320.0).abs() < 1e-12 && (t.v - 200.0).abs() < 1e-12);
        m.beta = PI / 2.0;
        let t = blade_tip(&m);
        assert!((t.u - 420.0).abs() < 1e-12 && (t.v - 300.0).abs() < 1e-9);
        m.beta = PI / 4.0;
        let t = blade_tip(&m);
        let s = 100.0 * std::f64::consts::FRAC_1_SQRT_2;
        assert!((t.u - (320.0 + s)).abs() < 1e-9 && (t.v - (300.0 - s)).abs() < 1e-9);
        assert!((t.u - 390.7).abs() < 0.05 && (t.v - 229.3).abs() < 0.05);
    }

    #[test]
    fn nothing_in_view() {
        let scene = Scene::new(vec![SceneObject::tower(WorldPoint::new(-80.0, 0.0, 0.0), 31.88, 0.0)]);
        let mut rng = stream(1, "det");
        assert!(detect(&scene, &quad(), &CameraIntrinsics::default(), &NoiseConfig::noiseless(), &ConfidenceModel::default(), &mut rng).is_empty());
    }

    #[test]
    fn turbine_confidence_at_peak_and_mid_phase() {
        let mut rng = stream(1, "det");
        let k = CameraIntrinsics::default();
        let m = ConfidenceModel::default();
        let scene = turbine_scene(2.0 * PI / 3.0);
        let b = detect(&scene, &quad(), &k, &NoiseConfig::noiseless(), &m, &mut rng);
        assert_eq!(b.len(), 1);
        assert!((b[0].confidence - 0.974).abs() < 1e-12);
        let mid = advance_scene(&scene, (PI / 6.0) / (2.0 * PI / 3.0));
        let c = detect(&mid, &quad(), &k, &NoiseConfig::noiseless(), &m, &mut rng)[0].confidence;
        assert!((0.90..0.974).contains(&c));
    }

    #[test]
    fn noiseless_box_contains_all_vertices() {
        let mut rng = stream(2, "det");
        let k = CameraIntrinsics::default();
        let scene = turbine_scene(1.0);
        let q = quad();
        let b = &detect(&scene, &q, &k, &NoiseConfig::noiseless(), &ConfidenceModel::default(), &mut rng)[0];
        for poly in scene.objects[0].silhouette(0.0) {
            for v in poly.vertices {
                let p = project(&world_to_camera(&v.into(), &q), &k).unwrap();
                assert!(b.padded(1e-9).contains(&p), "{p:?} {b:?}");
            }
        }
        let mut rng2 = stream(2, "det");
        let again = &detect(&scene, &q, &k, &NoiseConfig::noiseless(), &ConfidenceModel::default(), &mut rng2)[0];
        assert_eq!(b, again);
    }

    fn series(period: f64, t_last_peak: f64, t_now: f64, dt: f64) -> Vec<(f64, f64)> {
        let m = ConfidenceModel::default();
        let omega = THIRD / period;
        let n = (t_now / dt).round() as usize;
        (0..=n)
            .map(|i| {
                let t = t_now - (n - i) as f64 * dt;
                (t, confidence_model(omega * (t - t_last_peak), &m))
            })
            .collect()
    }

    #[test]
    fn predicts_remaining_time() {
        let h = series(3.0, 9.0, 10.0, 0.08);
        let p = predict_time_to_peak(&h).unwrap();
        assert!((p.dt_next_peak - 2.0).abs() <= 0.08, "{}", p.dt_next_peak);
        assert!((p.period - 3.0).abs() < 0.05);
    }

    #[test]
    fn queried_at_peak() {
        let h = series(3.0, 9.6, 9.6, 0.08);
        let p = predict_time_to_peak(&h).unwrap();
        let e = p.dt_next_peak.min(p.period - p.dt_next_peak);
        assert!(e <= 0.08, "{}", p.dt_next_peak);
    }

    #[test]
    fn constant_series_is_aperiodic() {
        let h: Vec<(f64, f64)> = (0..100).map(|i| (i as f64 * 0.08, 0.975)).collect();
        assert!(matches!(predict_time_to_peak(&h), Err(Error::NoPeriodicity(_))));
    }

    #[test]
    fn short_history_is_rejected() {
        let h = series(3.0, 1.0, 4.0, 0.08);
        assert!(matches!(predict_time_to_peak(&h), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn random_phases_within_one_frame() {
        use rand::Rng;
        let mut rng = stream(7, "phases");
        for _ in 0..20 {
            let period = 1.0 + 3.0 * rng.random::<f64>();
            let last = 10.0 - period * rng.random::<f64>();
            let h = series(period, last, 10.0, 0.08);
            let p = predict_time_to_peak(&h).unwrap();
            let truth = (period - (10.0 - last)).rem_euclid(period);
            let mut e = (p.dt_next_peak - truth).abs();
            e = e.min(period - e);
            assert!(e < 0.08, "period {period} truth {truth} got {}", p.dt_next_peak);
        }
    }

    #[test]
    fn active_detect_reaches_peak() {
        let k = CameraIntrinsics::default();
        let m = ConfidenceModel::default();
        let noise = NoiseConfig::noiseless();
        let omega = 2.0 * PI / 9.0; // 3 s confidence period
        let mut scene = turbine_scene(omega);
        let mut rng = stream(3, "active");
        let mut hist = Vec::new();
        // end the history at the worst phase
        let t_end = (PI / 3.0) / omega + 3.0 * 3.0;
        while scene.time <= t_end + 1e-9 {
            let b = &detect(&scene, &quad(), &k, &noise, &m, &mut rng)[0];
            hist.push((scene.time, b.confidence));
            scene = advance_scene(&scene, 0.08);
        }
        let last = *hist.last().unwrap();
        let standard = Scene { time: last.0, ..scene.clone() };
        assert!(last.1 < 0.91);
        let a = active_detect(&standard, &quad(), &k, &noise, &m, &hist, 0, &mut rng).unwrap();
        assert!(a.bbox.confidence >= 0.969, "{}", a.bbox.confidence);
        assert!(a.waited <= 3.0 + 0.08);
    }

    #[test]
    fn active_detect_tower_is_immediate() {
        let k = CameraIntrinsics::default();
        let scene = Scene::new(vec![SceneObject::tower(WorldPoint::new(80.0, 0.0, 0.0), 31.88, PI)]);
        let hist: Vec<(f64, f64)> = (0..60).map(|i| (i as f64 * 0.08, 0.975)).collect();
        let mut rng = stream(3, "tower");
        let q = QuadState::at_rest(WorldPoint::new(0.0, 0.0, -16.0), 0.0);
        let a = active_detect(&scene, &q, &k, &NoiseConfig::noiseless(), &ConfidenceModel::default(), &hist, 0, &mut rng).unwrap();
        assert_eq!(a.waited, 0.0);
        assert_eq!(a.bbox.class, ObjectKind::ElectricTower);
    }

    fn blade_frames(scene: &Scene, q: &QuadState, n: usize) -> (Vec<GrayFrame>, GrayFrame) {
        let k = CameraIntrinsics::default();
        let mut s = scene.clone();
        let mut frames = Vec::new();
        for _ in 0..n {
            frames.push(render(&s, q, &k));
            s = advance_scene(&s, 0.08);
        }
        let diffs: Vec<GrayFrame> = frames.windows(2).map(|w| frame_difference(&w[1], &w[0], 40).unwrap()).collect();
        (frames, union_masks(&diffs).unwrap())
    }

    #[test]
    fn blade_fit_matches_geometry() {
        let scene = turbine_scene(2.0 * PI / 3.0);
        let q = quad();
        let (frames, mask) = blade_frames(&scene, &q, 32);
        let m = fit_blade_model(&mask, &frames).unwrap();
        let k = CameraIntrinsics::default();
        let obj = &scene.objects[0];
        let hub = project(&world_to_camera(&obj.hub().unwrap().into(), &q), &k).unwrap();
        let top = project(&world_to_camera(&(obj.hub().unwrap() - nalgebra::Vector3::new(0.0, 0.0, 25.0)).into(), &q), &k).unwrap();
        let l = hub.v - top.v;
        assert!((m.blade_len_px - l).abs() / l < 0.05, "fit {} truth {l}", m.blade_len_px);
        assert!((m.omega_beta.abs() - 2.0 * PI / 3.0).abs() / (2.0 * PI / 3.0) < 0.05, "omega {}", m.omega_beta);
        assert!((m.hub_px.u - hub.u).abs() < 3.0 && (m.hub_px.v - hub.v).abs() < 3.0);
    }

    #[test]
    fn static_tower_cannot_be_fit() {
        let scene = Scene::new(vec![SceneObject::tower(WorldPoint::new(80.0, 0.0, 0.0), 31.88, PI)]);
        let q = QuadState::at_rest(WorldPoint::new(0.0, 0.0, -16.0), 0.0);
        let (frames, mask) = blade_frames(&scene, &q, 10);
        assert!(matches!(fit_blade_model(&mask, &frames), Err(Error::FitFailed(_))));
    }
}
