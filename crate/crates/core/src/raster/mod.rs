//! Grayscale rasterization of scene silhouettes and classical vision on the
//! resulting frames.

mod canny;
mod lk;

pub use canny::{canny, CannyParams};
pub use lk::{lk_track, trackable, LkParams, TrackedPoint};

use std::io::Write;
use std::path::Path;

use nalgebra::Vector3;

use crate::detection::BBox;
use crate::dynamics::QuadState;
use crate::error::{Error, Result};
use crate::sensors::{CameraIntrinsics, PixelPoint};
use crate::world::{PartKind, Scene};

pub const BACKGROUND: u8 = 30;
pub const FOREGROUND: u8 = 200;
/// Near clipping distance along the optical axis, m.
pub const NEAR_PLANE: f64 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub struct GrayFrame {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
    pub timestamp: f64,
}

impl GrayFrame {
    pub fn filled(width: usize, height: usize, value: u8, timestamp: f64) -> Self {
        Self { width, height, pixels: vec![value; width * height], timestamp }
    }

    #[inline]
    pub fn get(&self, u: usize, v: usize) -> u8 {
        self.pixels[v * self.width + u]
    }

    #[inline]
    pub fn set(&mut self, u: usize, v: usize, value: u8) {
        self.pixels[v * self.width + u] = value;
    }

    pub fn count_nonzero(&self) -> usize {
        self.pixels.iter().filter(|&&p| p != 0).count()
    }

    pub fn count_where(&self, f: impl Fn(u8) -> bool) -> usize {
        self.pixels.iter().filter(|&&p| f(p)).count()
    }

    /// Integer translation; vacated pixels take `fill`.
    pub fn shifted(&self, du: i64, dv: i64, fill: u8) -> GrayFrame {
        let mut out = GrayFrame::filled(self.width, self.height, fill, self.timestamp);
        for v in 0..self.height as i64 {
            for u in 0..self.width as i64 {
                let (su, sv) = (u - du, v - dv);
                if su >= 0 && sv >= 0 && su < self.width as i64 && sv < self.height as i64 {
                    out.set(u as usize, v as usize, self.get(su as usize, sv as usize));
                }
            }
        }
        out
    }

    pub fn write_pgm(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        write!(f, "P5\n{} {}\n255\n", self.width, self.height)?;
        f.write_all(&self.pixels)?;
        Ok(())
    }
}

/// Clip a camera-frame polygon to `x >= NEAR_PLANE` (Sutherland–Hodgman).
fn clip_near(poly: &[Vector3<f64>]) -> Vec<Vector3<f64>> {
    let mut out = Vec::with_capacity(poly.len() + 2);
    for i in 0..poly.len() {
        let a = poly[i];
        let b = poly[(i + 1) % poly.len()];
        let (ina, inb) = (a.x >= NEAR_PLANE, b.x >= NEAR_PLANE);
        if ina {
            out.push(a);
        }
        if ina != inb {
            let t = (NEAR_PLANE - a.x) / (b.x - a.x);
            out.push(a + (b - a) * t);
        }
    }
    out
}

/// Project the silhouettes of one object into pixel polygons, near-clipped.
pub fn projected_polygons(
    scene: &Scene,
    object: usize,
    quad: &QuadState,
    k: &CameraIntrinsics,
    part: Option<PartKind>,
) -> Vec<Vec<PixelPoint>> {
    let obj = &scene.objects[object];
    let rt = quad.rot.transpose();
    obj.silhouette(scene.time)
        .into_iter()
        .filter(|p| part.is_none_or(|want| p.part == want))
        .filter_map(|p| {
            let cam: Vec<Vector3<f64>> = p.vertices.iter().map(|w| rt * (w - quad.r)).collect();
            let clipped = clip_near(&cam);
            if clipped.len() < 3 {
                return None;
            }
            Some(
                clipped
                    .iter()
                    .map(|c| {
                        PixelPoint::new(
                            (c.y * k.focal_length + c.x * k.cx) / c.x,
                            (c.z * k.focal_length + c.x * k.cy) / c.x,
                        )
                    })
                    .collect(),
            )
        })
        .collect()
}

/// Scanline fill; a pixel is set when its center lies inside the polygon.
pub fn fill_polygon(frame: &mut GrayFrame, poly: &[PixelPoint], value: u8) {
    if poly.len() < 3 {
        return;
    }
    let vmin = poly.iter().map(|p| p.v).fold(f64::INFINITY, f64::min);
    let vmax = poly.iter().map(|p| p.v).fold(f64::NEG_INFINITY, f64::max);
    let j0 = vmin.ceil().max(0.0) as i64;
    let j1 = vmax.ceil().min(frame.height as f64) as i64;
    let mut xs: Vec<f64> = Vec::with_capacity(8);
    for j in j0..j1 {
        let y = j as f64;
        xs.clear();
        for i in 0..poly.len() {
            let a = poly[i];
            let b = poly[(i + 1) % poly.len()];
            if (a.v <= y && y < b.v) || (b.v <= y && y < a.v) {
                xs.push(a.u + (y - a.v) / (b.v - a.v) * (b.u - a.u));
            }
        }
        xs.sort_by(f64::total_cmp);
        for pair in xs.chunks_exact(2) {
            let i0 = pair[0].ceil().max(0.0) as i64;
            let i1 = pair[1].ceil().min(frame.width as f64) as i64;
            let row = j as usize * frame.width;
            for i in i0..i1 {
                frame.pixels[row + i as usize] = value;
            }
        }
    }
}

/// Flat-shaded silhouette render: objects at 200 over a 30 background.
pub fn render(scene: &Scene, quad: &QuadState, k: &CameraIntrinsics) -> GrayFrame {
    let mut frame = GrayFrame::filled(k.width, k.height, BACKGROUND, scene.time);
    for idx in 0..scene.objects.len() {
        for poly in projected_polygons(scene, idx, quad, k, None) {
            fill_polygon(&mut frame, &poly, FOREGROUND);
        }
    }
    frame
}

/// Binary mask of `|f_t − f_prev| > threshold` (255 where set, else 0).
pub fn frame_difference(f_t: &GrayFrame, f_prev: &GrayFrame, threshold: u8) -> Result<GrayFrame> {
    if f_t.width != f_prev.width || f_t.height != f_prev.height {
        return Err(Error::DimensionMismatch(f_t.width, f_t.height, f_prev.width, f_prev.height));
    }
    let pixels = f_t
        .pixels
        .iter()
        .zip(&f_prev.pixels)
        .map(|(&a, &b)| if a.abs_diff(b) > threshold { 255 } else { 0 })
        .collect();
    Ok(GrayFrame { width: f_t.width, height: f_t.height, pixels, timestamp: f_t.timestamp })
}

/// Pixel-wise OR of binary masks.
pub fn union_masks(masks: &[GrayFrame]) -> Option<GrayFrame> {
    let mut it = masks.iter();
    let mut acc = it.next()?.clone();
    for m in it {
        for (a, &b) in acc.pixels.iter_mut().zip(&m.pixels) {
            *a |= b;
        }
    }
    Some(acc)
}

/// Square dilation of a binary mask.
pub fn dilate(mask: &GrayFrame, radius: usize) -> GrayFrame {
    let (w, h) = (mask.width, mask.height);
    let r = radius as i64;
    let mut horiz = GrayFrame::filled(w, h, 0, mask.timestamp);
    for v in 0..h {
        for u in 0..w {
            if mask.get(u, v) != 0 {
                let lo = (u as i64 - r).max(0) as usize;
                let hi = (u as i64 + r).min(w as i64 - 1) as usize;
                for x in lo..=hi {
                    horiz.set(x, v, 255);
                }
            }
        }
    }
    let mut out = GrayFrame::filled(w, h, 0, mask.timestamp);
    for v in 0..h {
        for u in 0..w {
            if horiz.get(u, v) != 0 {
                let lo = (v as i64 - r).max(0) as usize;
                let hi = (v as i64 + r).min(h as i64 - 1) as usize;
                for y in lo..=hi {
                    out.set(u, y, 255);
                }
            }
        }
    }
    out
}

/// Mask with a filled disk of `radius` pixels around `center`.
pub fn disk_mask(width: usize, height: usize, center: &PixelPoint, radius: f64, timestamp: f64) -> GrayFrame {
    let mut out = GrayFrame::filled(width, height, 0, timestamp);
    let r2 = radius * radius;
    let v_lo = (center.v - radius).floor().max(0.0) as usize;
    let v_hi = ((center.v + radius).ceil().max(-1.0) as usize).min(height.saturating_sub(1));
    let u_lo = (center.u - radius).floor().max(0.0) as usize;
    let u_hi = ((center.u + radius).ceil().max(-1.0) as usize).min(width.saturating_sub(1));
    for v in v_lo..=v_hi {
        for u in u_lo..=u_hi {
            let (du, dv) = (u as f64 - center.u, v as f64 - center.v);
            if du * du + dv * dv <= r2 {
                out.set(u, v, 255);
            }
        }
    }
    out
}

/// Detected edge pixels of one box.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeSet {
    pub points: Vec<PixelPoint>,
    pub source_bbox: BBox,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::{SceneObject, TurbineParams, WorldPoint};
    use std::f64::consts::PI;

    fn k() -> CameraIntrinsics {
        CameraIntrinsics::default()
    }

    #[test]
    fn empty_scene_renders_background() {
        let f = render(&Scene::default(), &QuadState::at_rest(WorldPoint::new(0.0, 0.0, -10.0), 0.0), &k());
        assert!(f.pixels.iter().all(|&p| p == BACKGROUND));
        assert_eq!(f.pixels.len(), 640 * 480);
    }

    #[test]
    fn centered_tower_is_symmetric() {
        let scene = Scene::new(vec![SceneObject::tower(WorldPoint::new(80.0, 0.0, 0.0), 31.88, PI)]);
        let quad = QuadState::at_rest(WorldPoint::new(0.0, 0.0, -16.0), 0.0);
        let f = render(&scene, &quad, &k());
        let (mut left, mut right) = (0usize, 0usize);
        for v in 0..480 {
            for u in 0..640 {
                if f.get(u, v) == FOREGROUND {
                    match u.cmp(&320) {
                        std::cmp::Ordering::Less => left += 1,
                        std::cmp::Ordering::Greater => right += 1,
                        _ => {}
                    }
                }
            }
        }
        assert!(left + right > 1000);
        let asym = (left as f64 - right as f64).abs() / (left + right) as f64;
        assert!(asym < 0.02, "asymmetry {asym}");
    }

    fn vertical_extent(f: &GrayFrame) -> usize {
        let rows: Vec<usize> = (0..f.height).filter(|&v| (0..f.width).any(|u| f.get(u, v) == FOREGROUND)).collect();
        rows.last().unwrap() - rows.first().unwrap() + 1
    }

    #[test]
    fn doubling_distance_halves_height() {
        let quad = QuadState::at_rest(WorldPoint::new(0.0, 0.0, -16.0), 0.0);
        let near = Scene::new(vec![SceneObject::tower(WorldPoint::new(60.0, 0.0, 0.0), 31.88, PI)]);
        let far = Scene::new(vec![SceneObject::tower(WorldPoint::new(120.0, 0.0, 0.0), 31.88, PI)]);
        let hn = vertical_extent(&render(&near, &quad, &k())) as f64;
        let hf = vertical_extent(&render(&far, &quad, &k())) as f64;
        assert!((hn / 2.0 - hf).abs() <= 1.0, "near {hn} far {hf}");
    }

    #[test]
    fn render_is_deterministic() {
        let scene = Scene::new(vec![SceneObject::turbine(WorldPoint::new(90.0, 5.0, 0.0), TurbineParams::default(), PI)]);
        let quad = QuadState::at_rest(WorldPoint::new(0.0, 0.0, -40.0), 0.05);
        assert_eq!(render(&scene, &quad, &k()), render(&scene, &quad, &k()));
    }

    #[test]
    fn frame_difference_cases() {
        let a = GrayFrame::filled(640, 480, 30, 0.0);
        assert_eq!(frame_difference(&a, &a, 40).unwrap().count_nonzero(), 0);
        let mut b = a.clone();
        b.set(10, 20, 130);
        let d = frame_difference(&b, &a, 50).unwrap();
        assert_eq!(d.count_nonzero(), 1);
        assert_eq!(d.get(10, 20), 255);
        let c = GrayFrame::filled(320, 240, 0, 0.0);
        assert!(matches!(frame_difference(&a, &c, 40), Err(Error::DimensionMismatch(..))));
    }

    #[test]
    fn rotating_turbine_difference_is_inside_swept_disk() {
        let turbine = SceneObject::turbine(WorldPoint::new(80.0, -15.0, 0.0), TurbineParams::default(), PI);
        let tower = SceneObject::tower(WorldPoint::new(80.0, 30.0, 0.0), 31.88, PI);
        let scene = Scene::new(vec![turbine.clone(), tower]);
        let quad = QuadState::at_rest(WorldPoint::new(0.0, 0.0, -45.0), 0.0);
        let f0 = render(&scene, &quad, &k());
        let next = crate::world::advance_scene(&scene, 0.08);
        let f1 = render(&next, &quad, &k());
        let d = frame_difference(&f1, &f0, 40).unwrap();
        assert!(d.count_nonzero() > 50);
        // swept disk from geometry, padded by one pixel
        let hub = crate::sensors::project(&crate::sensors::world_to_camera(&turbine.hub().unwrap().into(), &quad), &k()).unwrap();
        let tip = crate::sensors::project(&crate::sensors::world_to_camera(&turbine.blade_tips(0.0)[0].into(), &quad), &k()).unwrap();
        let radius = ((tip.u - hub.u).powi(2) + (tip.v - hub.v).powi(2)).sqrt() + 2.0;
        for v in 0..480 {
            for u in 0..640 {
                if d.get(u, v) != 0 {
                    let r = ((u as f64 - hub.u).powi(2) + (v as f64 - hub.v).powi(2)).sqrt();
                    assert!(r <= radius, "motion pixel at ({u},{v}) outside swept disk");
                }
            }
        }
    }

    proptest::proptest! {
        #[test]
        fn frame_difference_is_symmetric(seed in 0u64..1000) {
            use rand::Rng;
            let mut rng = crate::rng::stream(seed, "fd");
            let mut a = GrayFrame::filled(64, 48, 0, 0.0);
            let mut b = a.clone();
            for p in a.pixels.iter_mut() { *p = rng.random(); }
            for p in b.pixels.iter_mut() { *p = rng.random(); }
            proptest::prop_assert_eq!(frame_difference(&a, &b, 40).unwrap().pixels, frame_difference(&b, &a, 40).unwrap().pixels);
        }
    }
}
