use std::collections::VecDeque;

use super::{EdgeSet, GrayFrame};
use crate::detection::BBox;
use crate::sensors::PixelPoint;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CannyParams {
    pub low: f64,
    pub high: f64,
    pub sigma: f64,
}

impl Default for CannyParams {
    fn default() -> Self {
        Self { low: 80.0, high: 160.0, sigma: 1.4 }
    }
}

// blur (2) + sobel (1) + nms (1)
const MARGIN: i64 = 4;

fn gaussian_kernel(sigma: f64) -> [f64; 5] {
    let mut k = [0.0; 5];
    for (i, w) in k.iter_mut().enumerate() {
        let x = i as f64 - 2.0;
        *w = (-x * x / (2.0 * sigma * sigma)).exp();
    }
    let s: f64 = k.iter().sum();
    k.map(|w| w / s)
}

/// Integer pixel range `[lo, hi)` covered by a box, clipped to the frame.
pub(crate) fn bbox_pixel_range(b: &BBox, width: usize, height: usize) -> (i64, i64, i64, i64) {
    let u0 = (b.u - b.w / 2.0).ceil().max(0.0) as i64;
    let u1 = ((b.u + b.w / 2.0).floor() as i64 + 1).min(width as i64);
    let v0 = (b.v - b.h / 2.0).ceil().max(0.0) as i64;
    let v1 = ((b.v + b.h / 2.0).floor() as i64 + 1).min(height as i64);
    (u0, u1, v0, v1)
}

/// Canny edges restricted to `bbox`.
///
/// The gradient pipeline runs on a slightly padded crop and only edge pixels
/// inside the box are kept, so the box border itself never produces edges.
pub fn canny(frame: &GrayFrame, bbox: &BBox, params: &CannyParams) -> EdgeSet {
    let empty = EdgeSet { points: Vec::new(), source_bbox: bbox.clone() };
    let (u0, u1, v0, v1) = bbox_pixel_range(bbox, frame.width, frame.height);
    if u1 <= u0 || v1 <= v0 || !(bbox.w > 0.0 && bbox.h > 0.0) {
        return empty;
    }
    let (cu0, cv0) = (u0 - MARGIN, v0 - MARGIN);
    let cw = (u1 - u0 + 2 * MARGIN) as usize;
    let ch = (v1 - v0 + 2 * MARGIN) as usize;
    let fw = frame.width as i64;
    let fh = frame.height as i64;
    let sample = |u: i64, v: i64| -> f64 {
        frame.get(u.clamp(0, fw - 1) as usize, v.clamp(0, fh - 1) as usize) as f64
    };

    // separable gaussian on the crop, sampling the frame with edge replication
    let k = gaussian_kernel(params.sigma);
    let mut tmp = vec![0.0; cw * ch];
    for y in 0..ch {
        for x in 0..cw {
            let (u, v) = (cu0 + x as i64, cv0 + y as i64);
            tmp[y * cw + x] = (0..5).map(|i| k[i] * sample(u + i as i64 - 2, v)).sum();
        }
    }
    let mut blur = vec![0.0; cw * ch];
    for y in 0..ch {
        for x in 0..cw {
            let mut acc = 0.0;
            for (i, &kw) in k.iter().enumerate() {
                let yy = (y as i64 + i as i64 - 2).clamp(0, ch as i64 - 1) as usize;
                acc += kw * tmp[yy * cw + x];
            }
            blur[y * cw + x] = acc;
        }
    }

    let at = |x: usize, y: usize| blur[y * cw + x];
    let mut mag = vec![0.0; cw * ch];
    let mut dir = vec![0u8; cw * ch];
    for y in 1..ch - 1 {
        for x in 1..cw - 1 {
            let gx = (at(x + 1, y - 1) + 2.0 * at(x + 1, y) + at(x + 1, y + 1))
                - (at(x - 1, y - 1) + 2.0 * at(x - 1, y) + at(x - 1, y + 1));
            let gy = (at(x - 1, y + 1) + 2.0 * at(x, y + 1) + at(x + 1, y + 1))
                - (at(x - 1, y - 1) + 2.0 * at(x, y - 1) + at(x + 1, y - 1));
            mag[y * cw + x] = gx.hypot(gy);
            let mut ang = gy.atan2(gx).to_degrees();
            if ang < 0.0 {
                ang += 180.0;
            }
            dir[y * cw + x] = if !(22.5..157.5).contains(&ang) {
                0
            } else if ang < 67.5 {
                1
            } else if ang < 112.5 {
                2
            } else {
                3
            };
        }
    }

    // non-maximum suppression; ties resolved toward the lower-index side
    let mut nms = vec![0.0; cw * ch];
    for y in 2..ch - 2 {
        for x in 2..cw - 2 {
            let m = mag[y * cw + x];
            if m < params.low {
                continue;
            }
            let (dx, dy): (i64, i64) = match dir[y * cw + x] {
                0 => (1, 0),
                1 => (1, 1),
                2 => (0, 1),
                _ => (-1, 1),
            };
            let a = mag[(y as i64 - dy) as usize * cw + (x as i64 - dx) as usize];
            let b = mag[(y as i64 + dy) as usize * cw + (x as i64 + dx) as usize];
            if m > a && m >= b {
                nms[y * cw + x] = m;
            }
        }
    }

    // hysteresis, confined to the box
    let inside = |x: usize, y: usize| {
        let (u, v) = (cu0 + x as i64, cv0 + y as i64);
        u >= u0 && u < u1 && v >= v0 && v < v1
    };
    let mut keep = vec![false; cw * ch];
    let mut queue = VecDeque::new();
    for y in 0..ch {
        for x in 0..cw {
            if inside(x, y) && nms[y * cw + x] >= params.high {
                keep[y * cw + x] = true;
                queue.push_back((x, y));
            }
        }
    }
    while let Some((x, y)) = queue.pop_front() {
        for dy in -1i64..=1 {
            for dx in -1i64..=1 {
                let (nx, ny) = (x as i64 + dx, y as i64 + dy);
                if nx < 0 || ny < 0 || nx >= cw as i64 || ny >= ch as i64 {
                    continue;
                }
                let (nx, ny) = (nx as usize, ny as usize);
                let idx = ny * cw + nx;
                if !keep[idx] && inside(nx, ny) && nms[idx] >= params.low {
                    keep[idx] = true;
                    queue.push_back((nx, ny));
                }
            }
        }
    }

    let mut points = Vec::new();
    for y in 0..ch {
        for x in 0..cw {
            if keep[y * cw + x] {
                points.push(PixelPoint::new((cu0 + x as i64) as f64, (cv0 + y as i64) as f64));
            }
        }
    }
    EdgeSet { points, source_bbox: bbox.clone() }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::{render, BACKGROUND, FOREGROUND};
    use crate::sensors::CameraIntrinsics;
    use crate::world::{ObjectKind, Scene, SceneObject, WorldPoint};
    use crate::QuadState;
    use std::f64::consts::PI;

    fn bbox(u: f64, v: f64, w: f64, h: f64) -> BBox {
        BBox { u, v, w, h, confidence: 0.97, class: ObjectKind::ElectricTower, timestamp: 0.0 }
    }

    fn step_frame(col: usize) -> GrayFrame {
        let mut f = GrayFrame::filled(640, 480, BACKGROUND, 0.0);
        for v in 0..480 {
            for u in col..640 {
                f.set(u, v, FOREGROUND);
            }
        }
        f
    }

    #[test]
    fn kernel_is_normalized_and_symmetric() {
        let k = gaussian_kernel(1.4);
        assert!((k.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(k[0], k[4]);
        assert_eq!(k[1], k[3]);
    }

    #[test]
    fn uniform_frame_has_no_edges() {
        let f = GrayFrame::filled(640, 480, 77, 0.0);
        assert!(canny(&f, &bbox(320.0, 240.0, 200.0, 200.0), &CannyParams::default()).points.is_empty());
    }

    #[test]
    fn empty_box_gives_empty_set() {
        let f = step_frame(100);
        assert!(canny(&f, &bbox(100.0, 240.0, 0.0, 50.0), &CannyParams::default()).points.is_empty());
    }

    #[test]
    fn vertical_step_gives_one_edge_per_row() {
        let f = step_frame(100);
        let b = bbox(100.0, 240.0, 60.0, 100.0);
        let e = canny(&f, &b, &CannyParams::default());
        let (_, _, v0, v1) = bbox_pixel_range(&b, 640, 480);
        assert_eq!(e.points.len() as i64, v1 - v0);
        for p in &e.points {
            assert!((99.0..=101.0).contains(&p.u));
        }
        let mut rows: Vec<i64> = e.points.iter().map(|p| p.v as i64).collect();
        rows.dedup();
        assert_eq!(rows.len() as i64, v1 - v0);
    }

    #[test]
    fn points_lie_inside_box() {
        let f = step_frame(100);
        let b = bbox(110.0, 240.0, 30.0, 40.0);
        for p in canny(&f, &b, &CannyParams::default()).points {
            assert!((p.u - b.u).abs() <= b.w / 2.0 && (p.v - b.v).abs() <= b.h / 2.0);
        }
    }

    #[test]
    fn tower_edges_track_silhouette_perimeter() {
        let scene = Scene::new(vec![SceneObject::tower(WorldPoint::new(70.0, 0.0, 0.0), 31.88, PI)]);
        let quad = QuadState::at_rest(WorldPoint::new(0.0, 0.0, -16.0), 0.0);
        let f = render(&scene, &quad, &CameraIntrinsics::default());
        // perimeter oracle: foreground pixels with a 4-connected background neighbour
        let (mut umin, mut umax, mut vmin, mut vmax) = (640, 0, 480, 0);
        let mut perimeter = 0usize;
        for v in 1..479 {
            for u in 1..639 {
                if f.get(u, v) != FOREGROUND {
                    continue;
                }
                umin = umin.min(u);
                umax = umax.max(u);
                vmin = vmin.min(v);
                vmax = vmax.max(v);
                let nb = [f.get(u - 1, v), f.get(u + 1, v), f.get(u, v - 1), f.get(u, v + 1)];
                if nb.contains(&BACKGROUND) {
                    perimeter += 1;
                }
            }
        }
        let b = bbox(
            (umin + umax) as f64 / 2.0,
            (vmin + vmax) as f64 / 2.0,
            (umax - umin) as f64 + 6.0,
            (vmax - vmin) as f64 + 6.0,
        );
        let n = canny(&f, &b, &CannyParams::default()).points.len() as f64;
        let rel = (n - perimeter as f64).abs() / perimeter as f64;
        assert!(rel < 0.2, "edges {n} perimeter {perimeter}");
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(24))]
        #[test]
        fn translation_equivariant(du in -20i64..20, dv in -20i64..20) {
            let scene = Scene::new(vec![SceneObject::tower(WorldPoint::new(90.0, 0.0, 0.0), 31.88, PI)]);
            let quad = QuadState::at_rest(WorldPoint::new(0.0, 0.0, -16.0), 0.0);
            let f = render(&scene, &quad, &CameraIntrinsics::default());
            let b = bbox(320.0, 230.0, 140.0, 150.0);
            let g = f.shifted(du, dv, BACKGROUND);
            let mut b2 = b.clone();
            b2.u += du as f64;
            b2.v += dv as f64;
            let p = CannyParams::default();
            let mut a: Vec<(i64, i64)> = canny(&f, &b, &p).points.iter().map(|q| (q.u as i64 + du, q.v as i64 + dv)).collect();
            let mut c: Vec<(i64, i64)> = canny(&g, &b2, &p).points.iter().map(|q| (q.u as i64, q.v as i64)).collect();
            a.sort();
            c.sort();
            proptest::prop_assert_eq!(a, c);
        }
    }
}
