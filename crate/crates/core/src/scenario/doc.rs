//! Serialized form of a scenario file (format version 1).
//!
//! Lengths are meters except the fields suffixed `_mm`; angles are degrees
//! in fields suffixed `_deg`. Every optional field has a default, filled in
//! by deserialization and [`ScenarioDoc::normalize`], so serializing a parsed
//! document echoes the complete configuration back.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::mpc::{SolverConfig, DEFAULT_DT};
use crate::optics::LensConstants;

pub const FORMAT_VERSION: u32 = 1;

fn format_version() -> u32 {
    FORMAT_VERSION
}

fn default_name() -> String {
    "scenario".to_string()
}

fn default_dt() -> f64 {
    DEFAULT_DT
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioDoc {
    #[serde(default = "format_version")]
    pub version: u32,
    #[serde(default = "default_name")]
    pub name: String,
    /// Simulated time, seconds.
    pub duration: f64,
    /// Control period, seconds.
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default)]
    pub seed: u64,
    /// Standard deviation of the per-axis target position noise, meters.
    #[serde(default)]
    pub noise_sigma: f64,
    #[serde(default)]
    pub lens: LensDoc,
    pub drone: DroneDoc,
    pub camera: CameraDoc,
    pub targets: Vec<TargetDoc>,
    pub sequences: Vec<SequenceDoc>,
    #[serde(default)]
    pub solver: SolverConfig,
}

impl ScenarioDoc {
    /// Fills defaults that depend on other fields.
    pub fn normalize(&mut self) {
        if self.lens.principal_point.is_none() {
            self.lens.principal_point = Some([
                f64::from(self.lens.image_width) / 2.0,
                f64::from(self.lens.image_height) / 2.0,
            ]);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LensDoc {
    pub circle_of_confusion_mm: f64,
    pub sensor_width: f64,
    pub sensor_height: f64,
    pub image_width: u32,
    pub image_height: u32,
    pub skew: f64,
    /// Defaults to the image center.
    pub principal_point: Option<[f64; 2]>,
}

impl Default for LensDoc {
    fn default() -> Self {
        let l = LensConstants::default();
        Self {
            circle_of_confusion_mm: 0.03,
            sensor_width: l.sensor_width,
            sensor_height: l.sensor_height,
            image_width: l.image_width,
            image_height: l.image_height,
            skew: l.skew,
            principal_point: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DroneDoc {
    pub position: [f64; 3],
    #[serde(default)]
    pub velocity: [f64; 3],
    /// Heading of the (level) camera, counter-clockwise from world +x.
    #[serde(default)]
    pub yaw_deg: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraDoc {
    pub focal_length_mm: f64,
    pub focus_distance: f64,
    pub aperture: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetDoc {
    pub id: String,
    /// Scripted path; a single waypoint makes a static target.
    pub waypoints: Vec<WaypointDoc>,
    /// Named points `offset` meters above the target centroid.
    #[serde(default)]
    pub features: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WaypointDoc {
    pub time: f64,
    pub position: [f64; 3],
    #[serde(default)]
    pub yaw_deg: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SequenceDoc {
    /// Activation time, seconds.
    pub start: f64,
    #[serde(default)]
    pub label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub near: Option<DistanceDoc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub far: Option<DistanceDoc>,
    #[serde(default)]
    pub targets: Vec<TargetGoalDoc>,
}

/// Desired near/far limit: exactly one of `target` (its live depth) or
/// `distance` (meters).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DistanceDoc {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub distance: Option<f64>,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetGoalDoc {
    pub id: String,
    #[serde(default)]
    pub image: Vec<ImageGoalDoc>,
    /// Desired depth along the optical axis, meters.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub depth: Option<WeightedValue>,
    /// Desired relative yaw between camera and target headings, degrees.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub relative_yaw_deg: Option<WeightedValue>,
}

/// Desired image position: exactly one of `pixel` or `fraction` (of the
/// image width and height).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImageGoalDoc {
    /// Feature name; the target centroid when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feature: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pixel: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fraction: Option<[f64; 2]>,
    pub weight: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightedValue {
    pub value: f64,
    pub weight: f64,
}
