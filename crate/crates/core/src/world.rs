//! Synthetic scene: wind turbines, electric towers and a flat ground at z = 0.
//!
//! Each object is a set of coplanar polygons standing in a vertical plane
//! through its base, facing `facing_yaw`. Turbine blades rotate in that plane
//! with angle β measured from straight up, positive toward the viewer's right.

use std::f64::consts::{PI, TAU};

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

/// A point in the NED world frame, meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WorldPoint {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl WorldPoint {
    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn vec(&self) -> Vector3<f64> {
        Vector3::new(self.x, self.y, self.z)
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    /// Height above ground (positive up).
    pub fn altitude(&self) -> f64 {
        -self.z
    }
}

impl From<Vector3<f64>> for WorldPoint {
    fn from(v: Vector3<f64>) -> Self {
        Self::new(v.x, v.y, v.z)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectKind {
    WindTurbine,
    ElectricTower,
}

impl ObjectKind {
    pub fn name(&self) -> &'static str {
        match self {
            ObjectKind::WindTurbine => "wind_turbine",
            ObjectKind::ElectricTower => "electric_tower",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TurbineParams {
    pub hub_height: f64,
    pub blade_length: f64,
    /// rad/s
    pub blade_angular_velocity: f64,
    /// rad, blade angle at scene time 0
    pub initial_blade_angle: f64,
}

impl Default for TurbineParams {
    fn default() -> Self {
        Self {
            hub_height: 52.48,
            blade_length: 25.0,
            blade_angular_velocity: TAU / 3.0,
            initial_blade_angle: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneObject {
    pub kind: ObjectKind,
    pub base: WorldPoint,
    /// Ground to structural top; for turbines, to the upper blade tip at a
    /// blade-up orientation.
    pub height_truth: f64,
    /// Direction the object's front face points to, radians from north.
    pub facing_yaw: f64,
    pub turbine: Option<TurbineParams>,
}

/// Structural parts are static; blades move.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PartKind {
    Structure,
    Blade,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Polygon {
    pub part: PartKind,
    pub vertices: Vec<Vector3<f64>>,
}

// Silhouette dimensions, meters.
const TOWER_BASE_HALF_WIDTH: f64 = 4.0;
const TOWER_TOP_HALF_WIDTH: f64 = 1.0;
const TOWER_LEG_WIDTH: f64 = 0.5;
const TOWER_BRACE_WIDTH: f64 = 0.35;
const TOWER_CAP_HEIGHT: f64 = 0.6;
const TOWER_ARM_THICKNESS: f64 = 0.8;
const TURBINE_MAST_BASE_HALF_WIDTH: f64 = 2.0;
const TURBINE_MAST_TOP_HALF_WIDTH: f64 = 1.25;
const HUB_RADIUS: f64 = 1.5;
const BLADE_ROOT_HALF_CHORD: f64 = 0.6;
const BLADE_MAX_HALF_CHORD: f64 = 1.2;
const BLADE_TIP_HALF_CHORD: f64 = 0.6;

impl SceneObject {
    pub fn tower(base: WorldPoint, height: f64, facing_yaw: f64) -> Self {
        Self {
            kind: ObjectKind::ElectricTower,
            base,
            height_truth: height,
            facing_yaw,
            turbine: None,
        }
    }

    pub fn turbine(base: WorldPoint, params: TurbineParams, facing_yaw: f64) -> Self {
        Self {
            kind: ObjectKind::WindTurbine,
            base,
            height_truth: params.hub_height + params.blade_length,
            facing_yaw,
            turbine: Some(params),
        }
    }

    /// Unit normal of the object plane, pointing toward the front.
    pub fn facing(&self) -> Vector3<f64> {
        Vector3::new(self.facing_yaw.cos(), self.facing_yaw.sin(), 0.0)
    }

    /// Viewer's right when looking at the front face.
    pub fn right(&self) -> Vector3<f64> {
        Vector3::new(self.facing_yaw.sin(), -self.facing_yaw.cos(), 0.0)
    }

    /// In-plane point `lateral` meters to the right and `height` meters up.
    pub fn plane_point(&self, lateral: f64, height: f64) -> Vector3<f64> {
        self.base.vec() + self.right() * lateral - Vector3::z() * height
    }

    pub fn hub(&self) -> Option<Vector3<f64>> {
        self.turbine.map(|p| self.plane_point(0.0, p.hub_height))
    }

    /// β(t) = β₀ + ω·t wrapped to [0, 2π).
    pub fn blade_angle(&self, t: f64) -> Option<f64> {
        self.turbine
            .map(|p| wrap_angle(p.initial_blade_angle + p.blade_angular_velocity * t))
    }

    /// Period of the three-fold blade pattern, seconds.
    pub fn blade_period(&self) -> Option<f64> {
        self.turbine
            .filter(|p| p.blade_angular_velocity.abs() > 0.0)
            .map(|p| (TAU / 3.0) / p.blade_angular_velocity.abs())
    }

    fn blade_dir(&self, beta: f64) -> Vector3<f64> {
        -Vector3::z() * beta.cos() + self.right() * beta.sin()
    }

    /// Tip of each of the three blades at time t.
    pub fn blade_tips(&self, t: f64) -> Vec<Vector3<f64>> {
        match (self.turbine, self.blade_angle(t)) {
            (Some(p), Some(beta)) => {
                let hub = self.plane_point(0.0, p.hub_height);
                (0..3)
                    .map(|k| hub + self.blade_dir(beta + k as f64 * TAU / 3.0) * p.blade_length)
                    .collect()
            }
            _ => Vec::new(),
        }
    }

    /// Highest structural point at time t.
    pub fn top_vertex(&self, t: f64) -> WorldPoint {
        match self.turbine {
            None => self.plane_point(0.0, self.height_truth).into(),
            Some(_) => {
                let tips = self.blade_tips(t);
                let top = tips
                    .into_iter()
                    .min_by(|a, b| a.z.total_cmp(&b.z))
                    .expect("three blades");
                top.into()
            }
        }
    }

    pub fn silhouette(&self, t: f64) -> Vec<Polygon> {
        match self.kind {
            ObjectKind::ElectricTower => self.tower_polygons(),
            ObjectKind::WindTurbine => self.turbine_polygons(t),
        }
    }

    fn quad(&self, pts: [(f64, f64); 4]) -> Polygon {
        Polygon {
            part: PartKind::Structure,
            vertices: pts.iter().map(|&(a, h)| self.plane_point(a, h)).collect(),
        }
    }

    /// Thin bar between two in-plane points.
    fn bar(&self, a: (f64, f64), b: (f64, f64), width: f64) -> Polygon {
        let (dx, dy) = (b.0 - a.0, b.1 - a.1);
        let len = (dx * dx + dy * dy).sqrt();
        let (nx, ny) = (-dy / len * width * 0.5, dx / len * width * 0.5);
        // keep bars that start at the footing above ground
        let g = |p: (f64, f64)| (p.0, p.1.max(0.0));
        self.quad([
            g((a.0 + nx, a.1 + ny)),
            g((b.0 + nx, b.1 + ny)),
            g((b.0 - nx, b.1 - ny)),
            g((a.0 - nx, a.1 - ny)),
        ])
    }

    fn tower_polygons(&self) -> Vec<Polygon> {
        let h_top = self.height_truth;
        let half_w = |h: f64| {
            TOWER_BASE_HALF_WIDTH + (TOWER_TOP_HALF_WIDTH - TOWER_BASE_HALF_WIDTH) * h / h_top
        };
        let leg_top = h_top - TOWER_CAP_HEIGHT;
        let mut polys = Vec::new();
        for side in [-1.0, 1.0] {
            polys.push(self.quad([
                (side * half_w(0.0), 0.0),
                (side * half_w(leg_top), leg_top),
                (side * (half_w(leg_top) - TOWER_LEG_WIDTH), leg_top),
                (side * (half_w(0.0) - TOWER_LEG_WIDTH), 0.0),
            ]));
        }
        polys.push(self.quad([
            (-TOWER_TOP_HALF_WIDTH, leg_top),
            (-TOWER_TOP_HALF_WIDTH, h_top),
            (TOWER_TOP_HALF_WIDTH, h_top),
            (TOWER_TOP_HALF_WIDTH, leg_top),
        ]));
        // Lattice panels with X bracing.
        let panels = 7;
        let panel_h = leg_top / panels as f64;
        for i in 0..panels {
            let (h0, h1) = (i as f64 * panel_h, (i + 1) as f64 * panel_h);
            let (w0, w1) = (half_w(h0) - TOWER_LEG_WIDTH * 0.5, half_w(h1) - TOWER_LEG_WIDTH * 0.5);
            polys.push(self.bar((-w0, h0), (w1, h1), TOWER_BRACE_WIDTH));
            polys.push(self.bar((w0, h0), (-w1, h1), TOWER_BRACE_WIDTH));
            if i > 0 {
                polys.push(self.bar((-w0, h0), (w0, h0), TOWER_BRACE_WIDTH));
            }
        }
        for (frac, half_len) in [(0.62, 6.0), (0.75, 5.0), (0.88, 4.0)] {
            let h = frac * h_top;
            let t = TOWER_ARM_THICKNESS * 0.5;
            polys.push(self.quad([(-half_len, h - t), (-half_len, h + t), (half_len, h + t), (half_len, h - t)]));
        }
        polys
    }

    fn turbine_polygons(&self, t: f64) -> Vec<Polygon> {
        let p = self.turbine.expect("turbine params");
        let mut polys = vec![self.quad([
            (-TURBINE_MAST_BASE_HALF_WIDTH, 0.0),
            (-TURBINE_MAST_TOP_HALF_WIDTH, p.hub_height),
            (TURBINE_MAST_TOP_HALF_WIDTH, p.hub_height),
            (TURBINE_MAST_BASE_HALF_WIDTH, 0.0),
        ])];
        let hub = self.plane_point(0.0, p.hub_height);
        polys.push(Polygon {
            part: PartKind::Structure,
            vertices: (0..8)
                .map(|k| {
                    let a = k as f64 * PI / 4.0 + PI / 8.0;
                    self.plane_point(HUB_RADIUS * a.cos(), p.hub_height + HUB_RADIUS * a.sin())
                })
                .collect(),
        });
        let beta = self.blade_angle(t).unwrap_or(0.0);
        for k in 0..3 {
            let b = beta + k as f64 * TAU / 3.0;
            let dir = self.blade_dir(b);
            let perp = self.blade_dir(b + PI / 2.0);
            let l = p.blade_length;
            polys.push(Polygon {
                part: PartKind::Blade,
                vertices: vec![
                    hub - perp * BLADE_ROOT_HALF_CHORD,
                    hub + dir * (0.25 * l) - perp * BLADE_MAX_HALF_CHORD,
                    hub + dir * l - perp * BLADE_TIP_HALF_CHORD,
                    hub + dir * l + perp * BLADE_TIP_HALF_CHORD,
                    hub + dir * (0.25 * l) + perp * BLADE_MAX_HALF_CHORD,
                    hub + perp * BLADE_ROOT_HALF_CHORD,
                ],
            });
        }
        polys
    }
}

pub fn wrap_angle(a: f64) -> f64 {
    let r = a.rem_euclid(TAU);
    if r >= TAU {
        0.0
    } else {
        r
    }
}

/// World container. Time only moves through [`advance_scene`].
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Scene {
    pub objects: Vec<SceneObject>,
    pub time: f64,
}

impl Scene {
    pub fn new(objects: Vec<SceneObject>) -> Self {
        Self { objects, time: 0.0 }
    }

    pub fn advance(&mut self, dt: f64) {
        assert!(dt >= 0.0, "scene time cannot run backwards");
        self.time += dt;
    }

    pub fn blade_angle(&self, idx: usize) -> Option<f64> {
        self.objects.get(idx).and_then(|o| o.blade_angle(self.time))
    }
}

pub fn advance_scene(scene: &Scene, dt: f64) -> Scene {
    let mut s = scene.clone();
    s.advance(dt);
    s
}

pub fn object_top_vertex(obj: &SceneObject, t: f64) -> WorldPoint {
    obj.top_vertex(t)
}

pub fn silhouette_polygons(obj: &SceneObject, t: f64) -> Vec<Polygon> {
    obj.silhouette(t)
}
