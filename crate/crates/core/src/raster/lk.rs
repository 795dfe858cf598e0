use super::GrayFrame;
use crate::sensors::PixelPoint;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LkParams {
    pub levels: usize,
    pub half_window: usize,
    pub max_iterations: usize,
    pub epsilon: f64,
    /// Mean absolute intensity residual above which a point is dropped.
    pub max_residual: f64,
    /// Per-pixel minimum eigenvalue of the structure tensor at the coarsest
    /// level, intensities scaled to [0, 1].
    pub min_eigen: f64,
}

impl Default for LkParams {
    fn default() -> Self {
        Self { levels: 3, half_window: 7, max_iterations: 30, epsilon: 0.01, max_residual: 20.0, min_eigen: 1e-3 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackedPoint {
    pub point: PixelPoint,
    pub tracked: bool,
    /// Finest-level structure tensor (gxx, gxy, gyy) scaled to unit trace.
    /// Displacement is only trustworthy along its dominant directions.
    pub structure: [f64; 3],
}

struct Level {
    w: usize,
    h: usize,
    img: Vec<f32>,
    gx: Vec<f32>,
    gy: Vec<f32>,
}

impl Level {
    fn new(w: usize, h: usize, img: Vec<f32>) -> Self {
        let mut gx = vec![0.0; w * h];
        let mut gy = vec![0.0; w * h];
        for y in 0..h {
            for x in 0..w {
                let xl = x.saturating_sub(1);
                let xr = (x + 1).min(w - 1);
                let yu = y.saturating_sub(1);
                let yd = (y + 1).min(h - 1);
                gx[y * w + x] = (img[y * w + xr] - img[y * w + xl]) / (xr - xl).max(1) as f32;
                gy[y * w + x] = (img[yd * w + x] - img[yu * w + x]) / (yd - yu).max(1) as f32;
            }
        }
        Self { w, h, img, gx, gy }
    }

    fn bilinear(&self, buf: &[f32], x: f64, y: f64) -> f64 {
        let x = x.clamp(0.0, (self.w - 1) as f64);
        let y = y.clamp(0.0, (self.h - 1) as f64);
        let x0 = (x.floor() as usize).min(self.w - 2);
        let y0 = (y.floor() as usize).min(self.h - 2);
        let (ax, ay) = (x - x0 as f64, y - y0 as f64);
        let i = y0 * self.w + x0;
        let top = buf[i] as f64 * (1.0 - ax) + buf[i + 1] as f64 * ax;
        let bot = buf[i + self.w] as f64 * (1.0 - ax) + buf[i + self.w + 1] as f64 * ax;
        top * (1.0 - ay) + bot * ay
    }

    fn downsample(&self) -> Level {
        const K: [f32; 5] = [1.0 / 16.0, 4.0 / 16.0, 6.0 / 16.0, 4.0 / 16.0, 1.0 / 16.0];
        let (w, h) = (self.w, self.h);
        let mut tmp = vec![0.0f32; w * h];
        for y in 0..h {
            for x in 0..w {
                tmp[y * w + x] = (0..5)
                    .map(|i| K[i] * self.img[y * w + (x as i64 + i as i64 - 2).clamp(0, w as i64 - 1) as usize])
                    .sum();
            }
        }
        let (nw, nh) = (w.div_ceil(2), h.div_ceil(2));
        let mut out = vec![0.0f32; nw * nh];
        for y in 0..nh {
            for x in 0..nw {
                out[y * nw + x] = (0..5)
                    .map(|i| K[i] * tmp[(2 * y as i64 + i as i64 - 2).clamp(0, h as i64 - 1) as usize * w + 2 * x])
                    .sum();
            }
        }
        Level::new(nw, nh, out)
    }
}

fn pyramid(frame: &GrayFrame, levels: usize) -> Vec<Level> {
    let base = Level::new(frame.width, frame.height, frame.pixels.iter().map(|&p| p as f32).collect());
    let mut pyr = vec![base];
    for _ in 1..levels {
        let next = pyr.last().unwrap().downsample();
        pyr.push(next);
    }
    pyr
}

fn min_eigen_per_pixel(level: &Level, px: f64, py: f64, hw: i64) -> f64 {
    let (mut gxx, mut gxy, mut gyy) = (0.0, 0.0, 0.0);
    for dy in -hw..=hw {
        for dx in -hw..=hw {
            let (x, y) = (px + dx as f64, py + dy as f64);
            let ix = level.bilinear(&level.gx, x, y);
            let iy = level.bilinear(&level.gy, x, y);
            gxx += ix * ix;
            gxy += ix * iy;
            gyy += iy * iy;
        }
    }
    let n_win = ((2 * hw + 1) * (2 * hw + 1)) as f64;
    let min_eig = 0.5 * (gxx + gyy - ((gxx - gyy).powi(2) + 4.0 * gxy * gxy).sqrt());
    min_eig / (n_win * 255.0 * 255.0)
}

/// Whether each point passes the coarsest-level conditioning test that
/// `lk_track` applies; used to seed trackers with points that can be kept.
pub fn trackable(frame: &GrayFrame, points: &[PixelPoint], params: &LkParams) -> Vec<bool> {
    let levels = params.levels.max(1);
    let pyr = pyramid(frame, levels);
    let top = &pyr[levels - 1];
    let s = 1.0 / (1u32 << (levels - 1)) as f64;
    points
        .iter()
        .map(|p| min_eigen_per_pixel(top, p.u * s, p.v * s, params.half_window as i64) >= params.min_eigen)
        .collect()
}

/// Pyramidal Lucas–Kanade. Points are flagged untracked when the coarsest
/// structure tensor is near singular, the final residual is too large, or
/// the result leaves the frame.
pub fn lk_track(prev: &GrayFrame, next: &GrayFrame, points: &[PixelPoint], params: &LkParams) -> Vec<TrackedPoint> {
    let levels = params.levels.max(1);
    let pp = pyramid(prev, levels);
    let pn = pyramid(next, levels);
    let hw = params.half_window as i64;
    let n_win = ((2 * hw + 1) * (2 * hw + 1)) as f64;

    points
        .iter()
        .map(|&p| {
            let mut g = (0.0f64, 0.0f64);
            let mut ok = prev.width > 1 && prev.height > 1;
            let mut residual = 0.0;
            let mut structure = [0.5, 0.0, 0.5];
            for lvl in (0..levels).rev() {
                let (lp, ln) = (&pp[lvl], &pn[lvl]);
                let s = 1.0 / (1u32 << lvl) as f64;
                let (px, py) = (p.u * s, p.v * s);
                let (mut gxx, mut gxy, mut gyy) = (0.0, 0.0, 0.0);
                let mut patch = Vec::with_capacity(n_win as usize);
                for dy in -hw..=hw {
                    for dx in -hw..=hw {
                        let (x, y) = (px + dx as f64, py + dy as f64);
                        let ix = lp.bilinear(&lp.gx, x, y);
                        let iy = lp.bilinear(&lp.gy, x, y);
                        gxx += ix * ix;
                        gxy += ix * iy;
                        gyy += iy * iy;
                        patch.push((x, y, lp.bilinear(&lp.img, x, y), ix, iy));
                    }
                }
                let tr = gxx + gyy;
                if lvl == levels - 1 && min_eigen_per_pixel(lp, px, py, hw) < params.min_eigen {
                    ok = false;
                    break;
                }
                // small ridge keeps aperture-limited windows solvable; motion
                // along the edge is inherited from the coarser level
                let mu = 1e-3 * tr + 1e-9;
                let (a, b, c) = (gxx + mu, gxy, gyy + mu);
                let det_r = a * c - b * b;
                let mut d = (0.0f64, 0.0f64);
                for _ in 0..params.max_iterations {
                    let (mut bx, mut by) = (0.0, 0.0);
                    for &(x, y, i0, ix, iy) in &patch {
                        let diff = i0 - ln.bilinear(&ln.img, x + g.0 + d.0, y + g.1 + d.1);
                        bx += diff * ix;
                        by += diff * iy;
                    }
                    let step = ((c * bx - b * by) / det_r, (a * by - b * bx) / det_r);
                    d.0 += step.0;
                    d.1 += step.1;
                    if step.0.hypot(step.1) < params.epsilon {
                        break;
                    }
                }
                if lvl == 0 {
                    if tr > 0.0 {
                        structure = [gxx / tr, gxy / tr, gyy / tr];
                    }
                    g = (g.0 + d.0, g.1 + d.1);
                    residual = patch
                        .iter()
                        .map(|&(x, y, i0, _, _)| (i0 - ln.bilinear(&ln.img, x + g.0, y + g.1)).abs())
                        .sum::<f64>()
                        / n_win;
                } else {
                    g = (2.0 * (g.0 + d.0), 2.0 * (g.1 + d.1));
                }
            }
            let q = PixelPoint::new(p.u + g.0, p.v + g.1);
            let inside = q.u >= 0.0 && q.v >= 0.0 && q.u <= (next.width - 1) as f64 && q.v <= (next.height - 1) as f64;
            let tracked = ok && q.u.is_finite() && q.v.is_finite() && inside && residual <= params.max_residual;
            TrackedPoint { point: if tracked { q } else { p }, tracked, structure }
        })
        .collect()
}
