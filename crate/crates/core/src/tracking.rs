//! Edge-point tracking and a constant-velocity Kalman filter on the box.

use nalgebra::{Matrix2, Matrix2x3, Matrix3, SMatrix, SVector, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::detection::BBox;
use crate::error::{Error, Result};
use crate::raster::{canny, lk_track, trackable, CannyParams, GrayFrame, LkParams, TrackedPoint};
use crate::sensors::PixelPoint;
use crate::world::ObjectKind;

pub type Vec8 = SVector<f64, 8>;
pub type Mat8 = SMatrix<f64, 8, 8>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KfParams {
    /// Process noise on (u, v, area, ratio), per second.
    pub q_position: f64,
    /// Process noise on the derivatives, per second.
    pub q_derivative: f64,
    /// Measurement noise on (u, v, area, ratio).
    pub r: [f64; 4],
}

impl Default for KfParams {
    fn default() -> Self {
        Self { q_position: 1e-2, q_derivative: 1e-1, r: [1.0, 1.0, 25.0, 1e-4] }
    }
}

/// State `[u, v, area, ratio, du, dv, darea, dratio]` and its covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct BBoxState {
    pub mean: Vec8,
    pub covariance: Mat8,
}

impl BBoxState {
    pub fn from_bbox(b: &BBox, params: &KfParams) -> Self {
        let mean = Vec8::from_column_slice(&[b.u, b.v, b.w * b.h, b.w / b.h, 0.0, 0.0, 0.0, 0.0]);
        let mut d = Vec8::zeros();
        for i in 0..4 {
            d[i] = params.r[i];
        }
        d[4] = 100.0;
        d[5] = 100.0;
        d[6] = 100.0 * (b.w * b.h).max(1.0);
        d[7] = 1e-2;
        Self { mean, covariance: Mat8::from_diagonal(&d) }
    }

    pub fn u(&self) -> f64 {
        self.mean[0]
    }
    pub fn v(&self) -> f64 {
        self.mean[1]
    }
    pub fn area(&self) -> f64 {
        self.mean[2]
    }
    pub fn ratio(&self) -> f64 {
        self.mean[3]
    }
    pub fn du(&self) -> f64 {
        self.mean[4]
    }
    pub fn dv(&self) -> f64 {
        self.mean[5]
    }
    pub fn darea(&self) -> f64 {
        self.mean[6]
    }
    pub fn dratio(&self) -> f64 {
        self.mean[7]
    }

    pub fn to_bbox(&self, class: ObjectKind, confidence: f64, timestamp: f64) -> BBox {
        let area = self.area().max(1e-9);
        let ratio = self.ratio().max(1e-9);
        BBox { u: self.u(), v: self.v(), w: (area * ratio).sqrt(), h: (area / ratio).sqrt(), confidence, class, timestamp }
    }
}

fn transition(dt: f64) -> Mat8 {
    let mut f = Mat8::identity();
    for i in 0..4 {
        f[(i, i + 4)] = dt;
    }
    f
}

fn symmetrize(p: &mut Mat8) {
    *p = (*p + p.transpose()) * 0.5;
}

pub fn kf_predict(state: &BBoxState, dt: f64, params: &KfParams) -> BBoxState {
    assert!(dt > 0.0, "kf_predict needs dt > 0");
    let f = transition(dt);
    let mut q = Vec8::zeros();
    for i in 0..4 {
        q[i] = params.q_position * dt;
        q[i + 4] = params.q_derivative * dt;
    }
    let mut covariance = f * state.covariance * f.transpose() + Mat8::from_diagonal(&q);
    symmetrize(&mut covariance);
    BBoxState { mean: f * state.mean, covariance }
}

/// Kalman update on `(u, v, area, ratio)`. Returns the new state and whether
/// the measurement was accepted; non-finite boxes leave the state untouched.
pub fn kf_update(state: &BBoxState, meas: &BBox, params: &KfParams) -> (BBoxState, bool) {
    let z = [meas.u, meas.v, meas.w * meas.h, meas.w / meas.h];
    if z.iter().any(|x| !x.is_finite()) {
        return (state.clone(), false);
    }
    let z = SVector::<f64, 4>::from_column_slice(&z);
    let mut h = SMatrix::<f64, 4, 8>::zeros();
    for i in 0..4 {
        h[(i, i)] = 1.0;
    }
    let r = SMatrix::<f64, 4, 4>::from_diagonal(&SVector::<f64, 4>::from_column_slice(&params.r));
    let s = h * state.covariance * h.transpose() + r;
    let Some(s_inv) = s.try_inverse() else {
        return (state.clone(), false);
    };
    let k = state.covariance * h.transpose() * s_inv;
    let innovation = z - h * state.mean;
    let mean = state.mean + k * innovation;
    // Joseph form keeps the covariance positive semi-definite
    let ikh = Mat8::identity() - k * h;
    let mut covariance = ikh * state.covariance * ikh.transpose() + k * r * k.transpose();
    symmetrize(&mut covariance);
    (BBoxState { mean, covariance }, true)
}

pub fn bbox_from_points(points: &[PixelPoint], class: ObjectKind, timestamp: f64) -> Result<BBox> {
    if points.len() < 2 {
        return Err(Error::TrackingLost(format!("{} points", points.len())));
    }
    let (mut umin, mut umax, mut vmin, mut vmax) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for p in points {
        umin = umin.min(p.u);
        umax = umax.max(p.u);
        vmin = vmin.min(p.v);
        vmax = vmax.max(p.v);
    }
    Ok(BBox {
        u: (umin + umax) / 2.0,
        v: (vmin + vmax) / 2.0,
        w: (umax - umin).max(1.0),
        h: (vmax - vmin).max(1.0),
        confidence: 1.0,
        class,
        timestamp,
    })
}

const SEED_EIGEN_MARGIN: f64 = 4.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrackerParams {
    pub max_points: usize,
    pub min_points: usize,
    pub kf: KfParams,
}

impl Default for TrackerParams {
    fn default() -> Self {
        Self { max_points: 200, min_points: 10, kf: KfParams::default() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackOutput {
    pub raw: BBox,
    pub filtered: BBox,
    pub representative: PixelPoint,
    pub count: usize,
    pub reinitialized: bool,
}

/// Edge points followed with Lucas–Kanade, a filtered box, and a
/// representative point for the localization filter.
///
/// The representative point starts as the mean of the initial points and is
/// carried forward through a least-squares scale-and-translation fit of the
/// surviving points, so dropping points does not make it jump.
#[derive(Debug, Clone)]
pub struct PointTracker {
    pub points: Vec<PixelPoint>,
    reference: Vec<PixelPoint>,
    reference_rep: PixelPoint,
    pub representative: PixelPoint,
    pub kf: BBoxState,
    pub class: ObjectKind,
    pub params: TrackerParams,
    pub canny: CannyParams,
    pub lk: LkParams,
}

fn mean_point(pts: &[PixelPoint]) -> PixelPoint {
    let n = pts.len().max(1) as f64;
    let (su, sv) = pts.iter().fold((0.0, 0.0), |a, p| (a.0 + p.u, a.1 + p.v));
    PixelPoint::new(su / n, sv / n)
}

fn subsample(pts: Vec<PixelPoint>, max: usize) -> Vec<PixelPoint> {
    if pts.len() <= max || max == 0 {
        return pts;
    }
    let step = pts.len() as f64 / max as f64;
    (0..max).map(|i| pts[(i as f64 * step) as usize]).collect()
}

fn similarity_map(from: &[PixelPoint], to: &[PixelPoint], p: PixelPoint) -> PixelPoint {
    let (mf, mt) = (mean_point(from), mean_point(to));
    let (mut num, mut den) = (0.0, 0.0);
    for (a, b) in from.iter().zip(to) {
        let (ax, ay) = (a.u - mf.u, a.v - mf.v);
        num += ax * (b.u - mt.u) + ay * (b.v - mt.v);
        den += ax * ax + ay * ay;
    }
    let s = if den > 1e-9 { num / den } else { 1.0 };
    PixelPoint::new(mt.u + s * (p.u - mf.u), mt.v + s * (p.v - mf.v))
}

/// Isotropic share added to each point's structure tensor so straight-edge
/// points still pin the fit weakly along the edge.
const ALONG_EDGE_WEIGHT: f64 = 0.05;

/// Weighted residual above which a correspondence is an outlier, px.
const OUTLIER_PX: f64 = 1.5;

/// Scale-plus-translation fit where each correspondence counts only along
/// the directions its window constrains: points on a straight edge slide
/// along it under LK, so their along-edge displacement is ignored. Points
/// that disagree with the fit (edges crossed by moving parts) are rejected
/// and the fit repeated. Returns the mapped point and the inlier flags.
fn weighted_similarity_map(from: &[PixelPoint], to: &[TrackedPoint], p: PixelPoint) -> (PixelPoint, Vec<bool>) {
    let mf = mean_point(from);
    let weight = |t: &TrackedPoint| {
        let [gxx, gxy, gyy] = t.structure;
        Matrix2::new(gxx + ALONG_EDGE_WEIGHT, gxy, gxy, gyy + ALONG_EDGE_WEIGHT)
    };
    let jac = |a: &PixelPoint| Matrix2x3::new(a.u - mf.u, 1.0, 0.0, a.v - mf.v, 0.0, 1.0);
    let mut inlier = vec![true; from.len()];
    let mut theta = None;
    for _ in 0..4 {
        let mut n = Matrix3::<f64>::zeros();
        let mut r = Vector3::<f64>::zeros();
        for ((a, t), _) in from.iter().zip(to).zip(&inlier).filter(|(_, k)| **k) {
            let jtw = jac(a).transpose() * weight(t);
            n += jtw * jac(a);
            r += jtw * Vector2::new(t.point.u, t.point.v);
        }
        let Some(th) = n.try_inverse().map(|inv| inv * r) else { break };
        theta = Some(th);
        let mut changed = false;
        for ((a, t), k) in from.iter().zip(to).zip(inlier.iter_mut()) {
            let e = jac(a) * th - Vector2::new(t.point.u, t.point.v);
            let ok = (e.transpose() * weight(t) * e)[0].sqrt() <= OUTLIER_PX;
            changed |= ok != *k;
            *k = ok;
        }
        if !changed {
            break;
        }
    }
    match theta {
        Some(th) => (PixelPoint::new(th[0] * (p.u - mf.u) + th[1], th[0] * (p.v - mf.v) + th[2]), inlier),
        None => (similarity_map(from, &to.iter().map(|t| t.point).collect::<Vec<_>>(), p), inlier),
    }
}

impl PointTracker {
    /// Seed from Canny edges inside `bbox`, skipping pixels set in `exclude`.
    pub fn init(
        frame: &GrayFrame,
        bbox: &BBox,
        params: TrackerParams,
        canny_params: CannyParams,
        lk: LkParams,
        exclude: Option<&GrayFrame>,
    ) -> Result<Self> {
        let points = Self::seed_points(frame, bbox, &params, &canny_params, &lk, exclude)?;
        let rep = mean_point(&points);
        let kf = BBoxState::from_bbox(&bbox_from_points(&points, bbox.class, frame.timestamp)?, &params.kf);
        Ok(Self {
            reference: points.clone(),
            reference_rep: rep,
            representative: rep,
            points,
            kf,
            class: bbox.class,
            params,
            canny: canny_params,
            lk,
        })
    }

    fn seed_points(
        frame: &GrayFrame,
        bbox: &BBox,
        params: &TrackerParams,
        canny_params: &CannyParams,
        lk: &LkParams,
        exclude: Option<&GrayFrame>,
    ) -> Result<Vec<PixelPoint>> {
        let edges: Vec<PixelPoint> = canny(frame, bbox, canny_params)
            .points
            .into_iter()
            .filter(|p| exclude.is_none_or(|m| m.get(p.u as usize, p.v as usize) == 0))
            .collect();
        // straight-edge points would be dropped by LK anyway; seed with a
        // margin so points do not flicker across the threshold
        let strict = LkParams { min_eigen: lk.min_eigen * SEED_EIGEN_MARGIN, ..*lk };
        let mut ok = trackable(frame, &edges, &strict);
        if ok.iter().filter(|k| **k).count() < params.min_points {
            // mostly straight edges: take what LK can hold at all
            ok = trackable(frame, &edges, lk);
        }
        let kept: Vec<PixelPoint> = edges.into_iter().zip(ok).filter(|(_, k)| *k).map(|(p, _)| p).collect();
        let pts = subsample(kept, params.max_points);
        if pts.len() < params.min_points {
            return Err(Error::TrackingLost(format!("{} edge points in box", pts.len())));
        }
        Ok(pts)
    }

    /// Re-seed from a fresh box while keeping the representative point continuous.
    pub fn reseed(&mut self, frame: &GrayFrame, bbox: &BBox, exclude: Option<&GrayFrame>) -> Result<()> {
        let pts = Self::seed_points(frame, bbox, &self.params, &self.canny, &self.lk, exclude)?;
        self.reference = pts.clone();
        self.reference_rep = self.representative;
        self.points = pts;
        Ok(())
    }

    /// One 80 ms tracking step from `prev` to `frame`. `redetect` supplies a
    /// fresh box when too few points survive.
    pub fn step(
        &mut self,
        prev: &GrayFrame,
        frame: &GrayFrame,
        dt: f64,
        exclude: Option<&GrayFrame>,
        redetect: impl FnOnce() -> Option<BBox>,
    ) -> Result<TrackOutput> {
        let tracked = lk_track(prev, frame, &self.points, &self.lk);
        let mut from = Vec::with_capacity(tracked.len());
        let mut kept = Vec::with_capacity(tracked.len());
        let excluded = |p: &PixelPoint| {
            exclude.is_some_and(|m| p.u >= 0.0 && p.v >= 0.0 && m.get(p.u as usize, p.v as usize) != 0)
        };
        for (t, r) in tracked.iter().zip(&self.reference) {
            if t.tracked && !excluded(&t.point) {
                from.push(*r);
                kept.push(*t);
            }
        }
        let (rep, inlier) = weighted_similarity_map(&from, &kept, self.reference_rep);
        let to: Vec<PixelPoint> = kept.iter().zip(&inlier).filter(|(_, k)| **k).map(|(t, _)| t.point).collect();
        let mut reinitialized = false;
        if to.len() >= self.params.min_points {
            self.representative = rep;
            self.reference_rep = self.representative;
            self.reference.clone_from(&to);
            self.points = to;
        } else {
            let fresh = redetect().ok_or_else(|| Error::TrackingLost(format!("{} points left", to.len())))?;
            if to.len() >= 3 {
                self.representative = rep;
            }
            self.reseed(frame, &fresh, exclude)?;
            reinitialized = true;
        }
        let raw = bbox_from_points(&self.points, self.class, frame.timestamp)?;
        let predicted = kf_predict(&self.kf, dt, &self.params.kf);
        let (kf, _) = kf_update(&predicted, &raw, &self.params.kf);
        self.kf = kf;
        Ok(TrackOutput {
            filtered: self.kf.to_bbox(self.class, raw.confidence, frame.timestamp),
            raw,
            representative: self.representative,
            count: self.points.len(),
            reinitialized,
        })
    }
}

/// Stateless form: track `points` from `prev` to `frame` and rebuild the box.
pub fn track_step(
    prev: &GrayFrame,
    frame: &GrayFrame,
    points: &[PixelPoint],
    class: ObjectKind,
) -> Result<(BBox, Vec<PixelPoint>)> {
    let kept: Vec<PixelPoint> =
        lk_track(prev, frame, points, &LkParams::default()).into_iter().filter(|t| t.tracked).map(|t| t.point).collect();
    if kept.len() < TrackerParams::default().min_points {
        return Err(Error::TrackingLost(format!("{} points left", kept.len())));
    }
    Ok((bbox_from_points(&kept, class, frame.timestamp)?, kept))
}
