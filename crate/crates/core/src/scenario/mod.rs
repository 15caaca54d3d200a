//! Scenario files, the closed-loop runner, traces and plots.
//!
//! A scenario describes the lens, the initial drone and camera state, the
//! scripted targets and a timed list of shot directives. [`parse_scenario`]
//! validates a JSON document into a [`Scenario`] (SI units throughout) and
//! [`run`] simulates it in closed loop, producing one [`TraceRecord`] per
//! control step.

pub mod doc;
mod plot;
mod runner;
mod trace;

use std::fmt;
use std::path::Path;

use nalgebra::Vector3;
use thiserror::Error;

use crate::costs::{DepthGoal, DesiredDistance, DistanceGoal, ImageGoal, RotationGoal, ShotDirective, TargetGoals};
use crate::geometry::{heading, relative_yaw, ImagePoint};
use crate::mpc::SolverConfig;
use crate::optics::{CameraIntrinsics, LensConstants};
use crate::world::{DroneState, Feature, TargetState, Waypoint};

pub use doc::{ScenarioDoc, FORMAT_VERSION};
pub use plot::render_plots;
pub use runner::{run, RunError, RunFailure, TargetSample, Trace, TraceRecord};
pub use trace::{read_trace, trace_columns, write_trace, TraceError};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("{path}: {message} (line {line}, column {column})")]
    Schema {
        path: String,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("{path}: {message}")]
    Invalid { path: String, message: String },
    #[error("cannot read scenario: {0}")]
    Io(#[from] std::io::Error),
}

fn invalid(path: impl fmt::Display, message: impl fmt::Display) -> ScenarioError {
    ScenarioError::Invalid {
        path: path.to_string(),
        message: message.to_string(),
    }
}

/// One directive and the time it becomes active.
#[derive(Debug, Clone, PartialEq)]
pub struct Sequence {
    pub start: f64,
    pub label: String,
    pub directive: ShotDirective,
}

/// A validated scenario in SI units.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub duration: f64,
    pub dt: f64,
    pub seed: u64,
    pub noise_sigma: f64,
    pub lens: LensConstants,
    pub drone: DroneState,
    pub camera: CameraIntrinsics,
    pub targets: Vec<TargetState>,
    pub sequences: Vec<Sequence>,
    /// Solver settings; `dt` mirrors the scenario's.
    pub solver: SolverConfig,
    doc: ScenarioDoc,
}

/// Parses and validates a JSON scenario document.
pub fn parse_scenario(text: &str) -> Result<Scenario, ScenarioError> {
    Scenario::from_doc(parse_doc(text)?)
}

/// Parses a JSON scenario document without semantic validation, e.g. to
/// apply overrides before [`Scenario::from_doc`].
pub fn parse_doc(text: &str) -> Result<ScenarioDoc, ScenarioError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner();
        ScenarioError::Schema {
            path,
            line: inner.line(),
            column: inner.column(),
            message: strip_position(&inner.to_string()),
        }
    })
}

/// serde_json appends " at line L column C"; the error carries those separately.
fn strip_position(msg: &str) -> String {
    match msg.rfind(" at line ") {
        Some(i) => msg[..i].to_string(),
        None => msg.to_string(),
    }
}

pub fn load_scenario(path: &Path) -> Result<Scenario, ScenarioError> {
    parse_scenario(&std::fs::read_to_string(path)?)
}

impl Scenario {
    pub fn from_doc(mut doc: ScenarioDoc) -> Result<Self, ScenarioError> {
        doc.normalize();
        if doc.version != FORMAT_VERSION {
            return Err(invalid(
                "version",
                format!("unsupported format version {}", doc.version),
            ));
        }
        if !(doc.duration.is_finite() && doc.duration > 0.0) {
            return Err(invalid("duration", "must be positive and finite"));
        }
        if !(doc.dt.is_finite() && doc.dt > 0.0 && doc.dt <= doc.duration) {
            return Err(invalid("dt", "must be positive, finite and at most the duration"));
        }
        if !(doc.noise_sigma.is_finite() && doc.noise_sigma >= 0.0) {
            return Err(invalid("noise_sigma", "must be non-negative and finite"));
        }

        let lens = lens_from_doc(&doc.lens)?;
        let drone = drone_from_doc(&doc.drone)?;

        let mut solver = doc.solver.clone();
        solver.dt = doc.dt;
        solver.validate().map_err(|e| invalid("solver", e))?;

        let c = &doc.camera;
        let camera = CameraIntrinsics::new(c.focal_length_mm / 1e3, c.focus_distance, c.aperture);
        camera.validate().map_err(|e| invalid("camera", e))?;
        if !solver.intrinsics.contains(&camera) {
            return Err(invalid("camera", "initial intrinsics lie outside solver.intrinsics"));
        }

        let targets = targets_from_doc(&doc.targets)?;
        let sequences = sequences_from_doc(&doc, &lens, &targets)?;

        Ok(Self {
            name: doc.name.clone(),
            duration: doc.duration,
            dt: doc.dt,
            seed: doc.seed,
            noise_sigma: doc.noise_sigma,
            lens,
            drone,
            camera,
            targets,
            sequences,
            solver,
            doc,
        })
    }

    /// The normalized source document.
    pub fn doc(&self) -> &ScenarioDoc {
        &self.doc
    }

    /// Pretty JSON of the normalized document, with every default spelled out.
    pub fn dump(&self) -> String {
        serde_json::to_string_pretty(&self.doc).expect("scenario documents serialize")
    }

    /// Index of the sequence active at `t`: the last one starting at or before `t`.
    pub fn sequence_at(&self, t: f64) -> usize {
        self.sequences.partition_point(|s| s.start <= t).saturating_sub(1)
    }

    /// Number of control steps; records are taken at `k·dt` for `k = 0 ..= steps`.
    pub fn steps(&self) -> usize {
        (self.duration / self.dt + 1e-9).floor() as usize
    }
}

fn finite3(path: &str, v: &[f64; 3]) -> Result<Vector3<f64>, ScenarioError> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(Vector3::from(*v))
    } else {
        Err(invalid(path, "must be finite"))
    }
}

fn lens_from_doc(d: &doc::LensDoc) -> Result<LensConstants, ScenarioError> {
    let lens = LensConstants {
        circle_of_confusion: d.circle_of_confusion_mm / 1e3,
        sensor_width: d.sensor_width,
        sensor_height: d.sensor_height,
        image_width: d.image_width,
        image_height: d.image_height,
        skew: d.skew,
        principal_point: d.principal_point.expect("normalized"),
    };
    lens.validate().map_err(|e| invalid("lens", e))?;
    if !(lens.skew.is_finite() && lens.principal_point.iter().all(|x| x.is_finite())) {
        return Err(invalid("lens", "skew and principal point must be finite"));
    }
    Ok(lens)
}

fn drone_from_doc(d: &doc::DroneDoc) -> Result<DroneState, ScenarioError> {
    if !d.yaw_deg.is_finite() {
        return Err(invalid("drone.yaw_deg", "must be finite"));
    }
    Ok(DroneState {
        position: finite3("drone.position", &d.position)?,
        velocity: finite3("drone.velocity", &d.velocity)?,
        rotation: heading(d.yaw_deg.to_radians()),
    })
}

fn valid_id(id: &str) -> bool {
    !id.is_empty() && id.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
}

fn targets_from_doc(docs: &[doc::TargetDoc]) -> Result<Vec<TargetState>, ScenarioError> {
    let mut targets: Vec<TargetState> = Vec::with_capacity(docs.len());
    for (i, t) in docs.iter().enumerate() {
        let path = format!("targets[{i}]");
        if !valid_id(&t.id) {
            return Err(invalid(
                format!("{path}.id"),
                format!(
                    "`{}`: ids must be non-empty and use only letters, digits, `_` and `-`",
                    t.id
                ),
            ));
        }
        if targets.iter().any(|o| o.id == t.id) {
            return Err(invalid(format!("{path}.id"), format!("duplicate target id `{}`", t.id)));
        }
        if t.waypoints.is_empty() {
            return Err(invalid(
                format!("{path}.waypoints"),
                "at least one waypoint is required",
            ));
        }
        let mut waypoints = Vec::with_capacity(t.waypoints.len());
        for (j, w) in t.waypoints.iter().enumerate() {
            let wp = format!("{path}.waypoints[{j}]");
            finite3(&format!("{wp}.position"), &w.position)?;
            if !(w.time.is_finite() && w.yaw_deg.is_finite()) {
                return Err(invalid(wp, "time and yaw must be finite"));
            }
            if j > 0 && w.time <= t.waypoints[j - 1].time {
                return Err(invalid(
                    format!("{wp}.time"),
                    "waypoint times must be strictly increasing",
                ));
            }
            waypoints.push(Waypoint {
                time: w.time,
                position: w.position,
                yaw: w.yaw_deg.to_radians(),
            });
        }
        let mut features = Vec::with_capacity(t.features.len());
        for (name, &offset) in &t.features {
            if !offset.is_finite() {
                return Err(invalid(format!("{path}.features.{name}"), "offset must be finite"));
            }
            features.push(Feature {
                name: name.clone(),
                offset,
            });
        }
        targets.push(TargetState::new(t.id.clone(), waypoints, features));
    }
    Ok(targets)
}

fn sequences_from_doc(
    doc: &ScenarioDoc,
    lens: &LensConstants,
    targets: &[TargetState],
) -> Result<Vec<Sequence>, ScenarioError> {
    if doc.sequences.is_empty() {
        return Err(invalid("sequences", "at least one sequence is required"));
    }
    let mut out: Vec<Sequence> = Vec::with_capacity(doc.sequences.len());
    for (i, s) in doc.sequences.iter().enumerate() {
        let path = format!("sequences[{i}]");
        if i == 0 && s.start != 0.0 {
            return Err(invalid(format!("{path}.start"), "the first sequence must start at 0"));
        }
        if let Some(prev) = out.last() {
            if !(s.start > prev.start) {
                return Err(invalid(
                    format!("{path}.start"),
                    "start times must be strictly increasing",
                ));
            }
        }
        if !(s.start.is_finite() && s.start < doc.duration) {
            return Err(invalid(
                format!("{path}.start"),
                "must be finite and before the end of the run",
            ));
        }
        let directive = directive_from_doc(s, &path, lens)?;
        directive.validate(targets).map_err(|e| invalid(&path, e))?;
        out.push(Sequence {
            start: s.start,
            label: s.label.clone(),
            directive,
        });
    }
    Ok(out)
}

fn directive_from_doc(s: &doc::SequenceDoc, path: &str, lens: &LensConstants) -> Result<ShotDirective, ScenarioError> {
    let distance = |name: &str, d: &Option<doc::DistanceDoc>| -> Result<Option<DistanceGoal>, ScenarioError> {
        let Some(d) = d else { return Ok(None) };
        let desired = match (&d.target, d.distance) {
            (Some(id), None) => DesiredDistance::TargetDepth(id.clone()),
            (None, Some(x)) if x.is_finite() && x > 0.0 => DesiredDistance::Fixed(x),
            (None, Some(_)) => {
                return Err(invalid(
                    format!("{path}.{name}.distance"),
                    "must be positive and finite",
                ))
            }
            _ => {
                return Err(invalid(
                    format!("{path}.{name}"),
                    "give exactly one of `target` and `distance`",
                ))
            }
        };
        Ok(Some(DistanceGoal {
            desired,
            weight: d.weight,
        }))
    };
    let (w, h) = (f64::from(lens.image_width), f64::from(lens.image_height));
    let mut targets = Vec::with_capacity(s.targets.len());
    for (j, g) in s.targets.iter().enumerate() {
        let gp = format!("{path}.targets[{j}]");
        let mut goals = TargetGoals::new(g.id.clone());
        for (k, img) in g.image.iter().enumerate() {
            let point = match (img.pixel, img.fraction) {
                (Some([u, v]), None) => ImagePoint::new(u, v),
                (None, Some([fu, fv])) => ImagePoint::new(fu * w, fv * h),
                _ => {
                    return Err(invalid(
                        format!("{gp}.image[{k}]"),
                        "give exactly one of `pixel` and `fraction`",
                    ))
                }
            };
            if !(point.u.is_finite() && point.v.is_finite()) {
                return Err(invalid(format!("{gp}.image[{k}]"), "image point must be finite"));
            }
            goals.image.push(ImageGoal {
                feature: img.feature.clone(),
                point,
                weight: img.weight,
            });
        }
        if let Some(d) = g.depth {
            if !(d.value.is_finite() && d.value > 0.0) {
                return Err(invalid(format!("{gp}.depth.value"), "must be positive and finite"));
            }
            goals.depth = Some(DepthGoal {
                desired: d.value,
                weight: d.weight,
            });
        }
        if let Some(r) = g.relative_yaw_deg {
            if !r.value.is_finite() {
                return Err(invalid(format!("{gp}.relative_yaw_deg.value"), "must be finite"));
            }
            goals.rotation = Some(RotationGoal {
                desired: relative_yaw(r.value.to_radians()),
                weight: r.weight,
            });
        }
        targets.push(goals);
    }
    Ok(ShotDirective {
        near: distance("near", &s.near)?,
        far: distance("far", &s.far)?,
        targets,
    })
}

/// A complete single-target scenario with every default spelled out.
pub fn default_doc() -> ScenarioDoc {
    let text = r#"{
        "name": "default",
        "duration": 10.0,
        "drone": { "position": [0.0, 0.0, 1.7] },
        "camera": { "focal_length_mm": 35.0, "focus_distance": 5.0, "aperture": 2.8 },
        "targets": [
            { "id": "subject", "waypoints": [{ "time": 0.0, "position": [5.0, 0.0, 1.0] }],
              "features": { "head": 0.7 } }
        ],
        "sequences": [
            { "start": 0.0, "label": "frame the subject",
              "far": { "target": "subject", "weight": 1.0 },
              "targets": [
                  { "id": "subject",
                    "image": [{ "feature": "head", "fraction": [0.5, 0.3333333333333333], "weight": 0.001 }],
                    "depth": { "value": 5.0, "weight": 1.0 } }
              ] }
        ]
    }"#;
    let mut doc: ScenarioDoc = serde_json::from_str(text).expect("built-in template parses");
    doc.normalize();
    doc
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "duration": 5,
        "drone": { "position": [0, 0, 1.5] },
        "camera": { "focal_length_mm": 35, "focus_distance": 5, "aperture": 2.8 },
        "targets": [{ "id": "t", "waypoints": [{ "time": 0, "position": [5, 0, 1.5] }] }],
        "sequences": [{ "start": 0, "targets": [{ "id": "t", "depth": { "value": 5, "weight": 1 } }] }]
    }"#;

    #[test]
    fn minimal_document_takes_defaults() {
        let s = parse_scenario(MINIMAL).unwrap();
        assert_eq!(s.dt, 0.2);
        assert_eq!(s.seed, 0);
        assert_eq!(s.noise_sigma, 0.0);
        assert_eq!(s.lens.principal_point, [960.0, 540.0]);
        approx::assert_relative_eq!(s.lens.circle_of_confusion, 3.0e-5, max_relative = 1e-15);
        assert_eq!(s.camera.focal_length, 0.035);
        assert_eq!(
            s.solver,
            SolverConfig {
                dt: 0.2,
                ..Default::default()
            }
        );
        assert_eq!(s.steps(), 25);
        assert_eq!(s.sequences.len(), 1);
    }

    #[test]
    fn dump_is_idempotent() {
        let s = parse_scenario(MINIMAL).unwrap();
        let again = parse_scenario(&s.dump()).unwrap();
        assert_eq!(again, s);
        assert_eq!(again.dump(), s.dump());
        let d = Scenario::from_doc(default_doc()).unwrap();
        assert_eq!(parse_scenario(&d.dump()).unwrap(), d);
    }

    #[test]
    fn unknown_keys_rejected_with_path_and_line() {
        let text = MINIMAL.replace("\"aperture\": 2.8", "\"aperture\": 2.8, \"iso\": 100");
        match parse_scenario(&text) {
            Err(ScenarioError::Schema { path, line, .. }) => {
                assert_eq!(path, "camera.iso");
                assert_eq!(line, 4);
            }
            other => panic!("{other:?}"),
        }
        let text = MINIMAL.replace("\"duration\": 5", "\"duration\": \"5\"");
        match parse_scenario(&text) {
            Err(ScenarioError::Schema { path, line, .. }) => {
                assert_eq!(path, "duration");
                assert_eq!(line, 2);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn duplicate_target_id_named() {
        let text = MINIMAL.replace(
            r#""targets": [{ "id": "t", "waypoints": [{ "time": 0, "position": [5, 0, 1.5] }] }]"#,
            r#""targets": [{ "id": "t", "waypoints": [{ "time": 0, "position": [5, 0, 1.5] }] },
                           { "id": "t", "waypoints": [{ "time": 0, "position": [6, 0, 1.5] }] }]"#,
        );
        let err = parse_scenario(&text).unwrap_err().to_string();
        assert!(err.contains("duplicate target id `t`"), "{err}");
        assert!(err.starts_with("targets[1].id"), "{err}");
    }

    #[test]
    fn sequence_times_validated() {
        let bad_start = MINIMAL.replace(r#"{ "start": 0,"#, r#"{ "start": 1,"#);
        assert!(parse_scenario(&bad_start)
            .unwrap_err()
            .to_string()
            .contains("start at 0"));

        let two = MINIMAL.replace(
            r#""sequences": [{ "start": 0, "targets": [{ "id": "t", "depth": { "value": 5, "weight": 1 } }] }]"#,
            r#""sequences": [{ "start": 0, "far": { "distance": 5, "weight": 1 } },
                             { "start": 0, "far": { "distance": 6, "weight": 1 } }]"#,
        );
        assert!(parse_scenario(&two)
            .unwrap_err()
            .to_string()
            .contains("strictly increasing"));
        let late = two.replace(
            r#"{ "start": 0, "far": { "distance": 6"#,
            r#"{ "start": 5, "far": { "distance": 6"#,
        );
        assert!(parse_scenario(&late)
            .unwrap_err()
            .to_string()
            .contains("before the end"));
    }

    #[test]
    fn directive_references_checked() {
        let text = MINIMAL.replace(
            r#""targets": [{ "id": "t", "depth""#,
            r#""targets": [{ "id": "x", "depth""#,
        );
        let err = parse_scenario(&text).unwrap_err().to_string();
        assert!(err.contains("unknown target `x`"), "{err}");
        let both = MINIMAL.replace(
            r#""start": 0,"#,
            r#""start": 0, "far": { "target": "t", "distance": 3, "weight": 1 },"#,
        );
        assert!(parse_scenario(&both).unwrap_err().to_string().contains("exactly one"));
    }

    #[test]
    fn camera_must_start_inside_the_box() {
        let text = MINIMAL.replace("\"aperture\": 2.8", "\"aperture\": 1.0");
        assert!(parse_scenario(&text).unwrap_err().to_string().starts_with("camera"));
    }

    #[test]
    fn sequence_lookup_is_last_started() {
        let text = MINIMAL.replace(
            r#""sequences": [{ "start": 0, "targets": [{ "id": "t", "depth": { "value": 5, "weight": 1 } }] }]"#,
            r#""sequences": [{ "start": 0, "far": { "distance": 5, "weight": 1 } },
                             { "start": 2, "far": { "distance": 6, "weight": 1 } }]"#,
        );
        let s = parse_scenario(&text).unwrap();
        assert_eq!(s.sequence_at(0.0), 0);
        assert_eq!(s.sequence_at(1.999_999), 0);
        assert_eq!(s.sequence_at(2.0), 1);
        assert_eq!(s.sequence_at(4.8), 1);
    }

    #[test]
    fn fractions_scale_to_pixels() {
        let text = MINIMAL.replace(
            r#""depth": { "value": 5, "weight": 1 }"#,
            r#""image": [{ "fraction": [0.25, 0.5], "weight": 1 }]"#,
        );
        let s = parse_scenario(&text).unwrap();
        assert_eq!(
            s.sequences[0].directive.targets[0].image[0].point,
            ImagePoint::new(480.0, 540.0)
        );
    }
}
