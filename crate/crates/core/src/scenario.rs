//! Scenario files: a TOML document describing the world, the vehicle, the
//! noise model, every tunable gain and the mission settings.
//!
//! ```toml
//! name = "turbine"
//! seed = 7
//! runs = 10
//! target = "wind_turbine"
//!
//! [start]
//! altitude = 40.0
//!
//! [[objects]]
//! kind = "wind_turbine"
//! north = 180.0
//! east = 25.0
//! ```
//!
//! Every section is optional and falls back to the defaults; unknown keys
//! are rejected with the line number and the closest valid key.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::control::ControlGains;
use crate::detection::ConfidenceModel;
use crate::dynamics::{QuadParams, QuadState};
use crate::ekf::EkfParams;
use crate::error::{Error, Result};
use crate::mission::MissionConfig;
use crate::sensors::{CameraIntrinsics, NoiseConfig};
use crate::tracking::TrackerParams;
use crate::world::{ObjectKind, Scene, SceneObject, TurbineParams, WorldPoint};

/// Take-off pose. The vehicle starts at rest.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StartPose {
    pub north: f64,
    pub east: f64,
    /// m above ground
    pub altitude: f64,
    /// rad
    pub yaw: f64,
}

impl Default for StartPose {
    fn default() -> Self {
        Self { north: 0.0, east: 0.0, altitude: 40.0, yaw: 0.0 }
    }
}

/// One scene object. Turbine-only keys are ignored for towers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ObjectSpec {
    pub kind: ObjectKind,
    pub north: f64,
    pub east: f64,
    /// Direction of the front face; defaults to facing the start point.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub facing_yaw: Option<f64>,
    /// Tower height, m.
    pub height: f64,
    pub hub_height: f64,
    pub blade_length: f64,
    /// rad/s
    pub blade_angular_velocity: f64,
    /// rad at t = 0
    pub initial_blade_angle: f64,
}

impl Default for ObjectSpec {
    fn default() -> Self {
        let t = TurbineParams::default();
        Self {
            kind: ObjectKind::WindTurbine,
            north: 180.0,
            east: 25.0,
            facing_yaw: None,
            height: 31.88,
            hub_height: t.hub_height,
            blade_length: t.blade_length,
            blade_angular_velocity: t.blade_angular_velocity,
            initial_blade_angle: t.initial_blade_angle,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub seed: u64,
    /// Runs in a batch; run i uses seed + i.
    pub runs: usize,
    pub target: ObjectKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<String>,
    pub start: StartPose,
    pub objects: Vec<ObjectSpec>,
    pub quad: QuadParams,
    pub noise: NoiseConfig,
    pub gains: ControlGains,
    pub camera: CameraIntrinsics,
    pub detector: ConfidenceModel,
    pub tracker: TrackerParams,
    pub ekf: EkfParams,
    pub mission: MissionConfig,
}

impl Default for Scenario {
    fn default() -> Self {
        Self::turbine()
    }
}

impl Scenario {
    /// Turbine 77.48 m tall, 180 m north and 25 m east of the take-off point.
    pub fn turbine() -> Self {
        Self {
            name: "turbine".into(),
            seed: 1,
            runs: 10,
            target: ObjectKind::WindTurbine,
            output_dir: None,
            start: StartPose::default(),
            objects: vec![ObjectSpec::default()],
            quad: QuadParams::default(),
            noise: NoiseConfig::default(),
            gains: ControlGains::default(),
            camera: CameraIntrinsics::default(),
            detector: ConfidenceModel::default(),
            tracker: TrackerParams::default(),
            ekf: EkfParams::default(),
            mission: MissionConfig::default(),
        }
    }

    /// Electric tower 31.88 m tall, 120 m north and 15 m west.
    pub fn tower() -> Self {
        Self {
            name: "tower".into(),
            target: ObjectKind::ElectricTower,
            start: StartPose { altitude: 15.0, ..StartPose::default() },
            objects: vec![ObjectSpec {
                kind: ObjectKind::ElectricTower,
                north: 120.0,
                east: -15.0,
                ..ObjectSpec::default()
            }],
            ..Self::turbine()
        }
    }

    pub fn noiseless(mut self) -> Self {
        self.noise = NoiseConfig::noiseless();
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn start_state(&self) -> QuadState {
        QuadState::at_rest(WorldPoint::new(self.start.north, self.start.east, -self.start.altitude), self.start.yaw)
    }

    pub fn scene(&self) -> Scene {
        let objects = self
            .objects
            .iter()
            .map(|o| {
                let base = WorldPoint::new(o.north, o.east, 0.0);
                let facing = o
                    .facing_yaw
                    .unwrap_or_else(|| (self.start.east - o.east).atan2(self.start.north - o.north));
                match o.kind {
                    ObjectKind::ElectricTower => SceneObject::tower(base, o.height, facing),
                    ObjectKind::WindTurbine => SceneObject::turbine(
                        base,
                        TurbineParams {
                            hub_height: o.hub_height,
                            blade_length: o.blade_length,
                            blade_angular_velocity: o.blade_angular_velocity,
                            initial_blade_angle: o.initial_blade_angle,
                        },
                        facing,
                    ),
                }
            })
            .collect();
        Scene::new(objects)
    }

    /// Index of the first object of the target class.
    pub fn target_index(&self) -> Option<usize> {
        self.objects.iter().position(|o| o.kind == self.target)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.runs == 0 {
            return bad("runs must be at least 1");
        }
        if self.target_index().is_none() {
            return bad(&format!("no object of the target class `{}`", self.target.name()));
        }
        if self.start.altitude <= 0.0 {
            return bad("start altitude must be positive");
        }
        for o in &self.objects {
            let ok = match o.kind {
                ObjectKind::ElectricTower => o.height > 0.0,
                ObjectKind::WindTurbine => {
                    o.hub_height > 0.0 && o.blade_length > 0.0 && o.blade_length < o.hub_height
                }
            };
            if !ok {
                return bad("object dimensions must be positive and blades shorter than the hub height");
            }
        }
        let k = &self.camera;
        if k.focal_length <= 0.0 || k.width < 16 || k.height < 16 {
            return bad("camera needs a positive focal length and at least 16x16 pixels");
        }
        if self.quad.thrust_max <= self.quad.mass * self.quad.gravity {
            return bad("thrust_max must exceed the vehicle weight");
        }
        if !(self.detector.c_min < self.detector.peak_value && self.detector.peak_value <= self.detector.c_max) {
            return bad("detector needs c_min < peak_value <= c_max");
        }
        self.quad.validate()?;
        self.gains.validate()?;
        self.mission.validate()
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }
}

pub fn parse_scenario_str(text: &str) -> Result<Scenario> {
    let scenario: Scenario = toml::from_str(text).map_err(|e| diagnose(text, &e))?;
    scenario.validate()?;
    Ok(scenario)
}

pub fn parse_scenario(path: &Path) -> Result<Scenario> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    parse_scenario_str(&text)
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].bytes().filter(|&b| b == b'\n').count() + 1
}

/// Closest candidate by normalized Levenshtein similarity.
pub fn nearest_key<'a>(key: &str, candidates: &[&'a str]) -> Option<&'a str> {
    candidates
        .iter()
        .map(|c| (strsim::normalized_levenshtein(key, c), *c))
        .max_by(|a, b| a.0.total_cmp(&b.0))
        .filter(|(s, _)| *s > 0.3)
        .map(|(_, c)| c)
}

fn diagnose(text: &str, err: &toml::de::Error) -> Error {
    let line = err.span().map(|s| line_of(text, s.start));
    let at = line.map_or(String::new(), |l| format!("line {l}: "));
    let msg = err.message();
    if let Some(rest) = msg.strip_prefix("unknown field `") {
        if let Some((key, tail)) = rest.split_once('`') {
            let candidates: Vec<&str> = tail.split('`').skip(1).step_by(2).collect();
            let hint = nearest_key(key, &candidates).map_or(String::new(), |c| format!("; did you mean `{c}`?"));
            return Error::Config(format!("{at}unknown key `{key}`{hint}"));
        }
    }
    Error::Config(format!("{at}{}", msg.trim()))
}
