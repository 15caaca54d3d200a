//! Discrete-time models of the drone+gimbal, the lens, scripted targets and
//! a noisy stand-in for the perception pipeline.
//!
//! The gimbal cancels the airframe attitude, so the drone rotation below is
//! directly the camera orientation.

use nalgebra::Vector3;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::geometry::{exp_map, heading, Pose, Rotation};
use crate::optics::CameraIntrinsics;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DroneState {
    pub position: Vector3<f64>,
    pub velocity: Vector3<f64>,
    pub rotation: Rotation,
}

impl DroneState {
    pub fn pose(&self) -> Pose {
        Pose::new(self.position, self.rotation)
    }

    pub fn is_finite(&self) -> bool {
        self.position.iter().chain(self.velocity.iter()).all(|x| x.is_finite())
            && self.rotation.matrix().iter().all(|x| x.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DroneInput {
    pub acceleration: Vector3<f64>,
    pub gimbal_rate: Vector3<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct IntrinsicsInput {
    pub v_focal: f64,
    pub v_focus: f64,
    pub v_aperture: f64,
}

impl IntrinsicsInput {
    pub fn as_array(&self) -> [f64; 3] {
        [self.v_focal, self.v_focus, self.v_aperture]
    }

    pub fn from_array(v: [f64; 3]) -> Self {
        Self {
            v_focal: v[0],
            v_focus: v[1],
            v_aperture: v[2],
        }
    }
}

/// Closed interval `[lo, hi]`, written `[lo, hi]` in scenario files.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl From<[f64; 2]> for Interval {
    fn from([lo, hi]: [f64; 2]) -> Self {
        Self { lo, hi }
    }
}

impl From<Interval> for [f64; 2] {
    fn from(i: Interval) -> Self {
        [i.lo, i.hi]
    }
}

impl Interval {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    pub const fn symmetric(r: f64) -> Self {
        Self { lo: -r, hi: r }
    }

    pub fn clamp(&self, x: f64) -> f64 {
        x.max(self.lo).min(self.hi)
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.lo && x <= self.hi
    }

    /// Distance from `x` to the interval; zero inside.
    pub fn violation(&self, x: f64) -> f64 {
        if x < self.lo {
            self.lo - x
        } else if x > self.hi {
            x - self.hi
        } else {
            0.0
        }
    }
}

/// Admissible lens states, applied component-wise to (f, F, A).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IntrinsicsBox {
    pub focal_length: Interval,
    pub focus_distance: Interval,
    pub aperture: Interval,
}

impl Default for IntrinsicsBox {
    fn default() -> Self {
        Self {
            focal_length: Interval::new(0.02, 0.20),
            focus_distance: Interval::new(0.5, 100.0),
            aperture: Interval::new(1.4, 22.0),
        }
    }
}

impl IntrinsicsBox {
    pub fn axes(&self) -> [Interval; 3] {
        [self.focal_length, self.focus_distance, self.aperture]
    }

    pub fn contains(&self, c: &CameraIntrinsics) -> bool {
        self.axes().iter().zip(c.as_array()).all(|(b, x)| b.contains(x))
    }

    pub fn clamp(&self, c: &CameraIntrinsics) -> CameraIntrinsics {
        let axes = self.axes();
        let v = c.as_array();
        CameraIntrinsics::from_array([axes[0].clamp(v[0]), axes[1].clamp(v[1]), axes[2].clamp(v[2])])
    }
}

/// Which intrinsics hit a box limit during a camera step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ClampFlags {
    pub focal_length: bool,
    pub focus_distance: bool,
    pub aperture: bool,
}

impl ClampFlags {
    pub fn any(&self) -> bool {
        self.focal_length || self.focus_distance || self.aperture
    }

    pub fn bits(&self) -> u8 {
        self.focal_length as u8 | (self.focus_distance as u8) << 1 | (self.aperture as u8) << 2
    }

    pub fn from_bits(bits: u8) -> Self {
        Self {
            focal_length: bits & 1 != 0,
            focus_distance: bits & 2 != 0,
            aperture: bits & 4 != 0,
        }
    }
}

/// Double integrator for position, body-rate integration for the gimbal.
pub fn step_drone(state: &DroneState, input: &DroneInput, dt: f64) -> DroneState {
    let a = input.acceleration;
    DroneState {
        position: state.position + state.velocity * dt + a * (0.5 * dt * dt),
        velocity: state.velocity + a * dt,
        rotation: state.rotation * exp_map(&input.gimbal_rate, dt),
    }
}

/// Euler step of the lens rates followed by clamping into `bounds`.
pub fn step_camera(
    state: &CameraIntrinsics,
    input: &IntrinsicsInput,
    dt: f64,
    bounds: &IntrinsicsBox,
) -> (CameraIntrinsics, ClampFlags) {
    let raw = CameraIntrinsics::new(
        state.focal_length + input.v_focal * dt,
        state.focus_distance + input.v_focus * dt,
        state.aperture + input.v_aperture * dt,
    );
    let clamped = bounds.clamp(&raw);
    let flags = ClampFlags {
        focal_length: clamped.focal_length != raw.focal_length,
        focus_distance: clamped.focus_distance != raw.focus_distance,
        aperture: clamped.aperture != raw.aperture,
    };
    (clamped, flags)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Waypoint {
    pub time: f64,
    pub position: [f64; 3],
    /// Heading in radians, counter-clockwise from world +x.
    pub yaw: f64,
}

/// A named point rigidly attached to a target, `offset` meters above its centroid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Feature {
    pub name: String,
    pub offset: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TargetState {
    pub id: String,
    pub pose: Pose,
    pub waypoints: Vec<Waypoint>,
    pub features: Vec<Feature>,
}

/// Wraps an angle into `(-π, π]`.
pub fn wrap_angle(a: f64) -> f64 {
    use std::f64::consts::{PI, TAU};
    let w = a.rem_euclid(TAU);
    if w > PI {
        w - TAU
    } else {
        w
    }
}

impl TargetState {
    /// Builds a target positioned at its script's start.
    pub fn new(id: impl Into<String>, waypoints: Vec<Waypoint>, features: Vec<Feature>) -> Self {
        let mut target = Self {
            id: id.into(),
            pose: Pose::new(Vector3::zeros(), Rotation::identity()),
            waypoints,
            features,
        };
        target.advance_to(0.0);
        target
    }

    pub fn feature_offset(&self, name: &str) -> Option<f64> {
        self.features.iter().find(|f| f.name == name).map(|f| f.offset)
    }

    /// Scripted pose at time `t`: linear in position, shortest-arc in yaw,
    /// held constant outside the script.
    pub fn scripted_pose(&self, t: f64) -> Pose {
        let wps = &self.waypoints;
        let at = |w: &Waypoint| Pose::new(Vector3::from(w.position), heading(w.yaw));
        match wps.len() {
            0 => return self.pose,
            1 => return at(&wps[0]),
            _ => {}
        }
        if t <= wps[0].time {
            return at(&wps[0]);
        }
        let last = wps.last().unwrap();
        if t >= last.time {
            return at(last);
        }
        let i = wps.partition_point(|w| w.time <= t) - 1;
        let (a, b) = (&wps[i], &wps[i + 1]);
        let s = (t - a.time) / (b.time - a.time);
        let pa = Vector3::from(a.position);
        let pb = Vector3::from(b.position);
        let yaw = a.yaw + s * wrap_angle(b.yaw - a.yaw);
        Pose::new(pa + (pb - pa) * s, heading(yaw))
    }

    pub fn advance_to(&mut self, t: f64) {
        self.pose = self.scripted_pose(t);
    }
}

pub fn step_targets(targets: &mut [TargetState], t: f64) {
    for target in targets {
        target.advance_to(t);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MeasuredTarget {
    pub id: String,
    pub position: Vector3<f64>,
    pub rotation: Rotation,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Measurement {
    pub targets: Vec<MeasuredTarget>,
}

impl Measurement {
    pub fn get(&self, id: &str) -> Option<&MeasuredTarget> {
        self.targets.iter().find(|t| t.id == id)
    }

    pub fn exact(targets: &[TargetState]) -> Self {
        Self {
            targets: targets
                .iter()
                .map(|t| MeasuredTarget {
                    id: t.id.clone(),
                    position: t.pose.position,
                    rotation: t.pose.rotation,
                })
                .collect(),
        }
    }
}

/// Ground-truth positions corrupted by i.i.d. zero-mean Gaussian noise per
/// axis; rotations pass through untouched.
pub fn measure_targets(targets: &[TargetState], noise_sigma: f64, rng: &mut impl Rng) -> Measurement {
    let mut m = Measurement::exact(targets);
    if noise_sigma > 0.0 {
        let normal = Normal::new(0.0, noise_sigma).expect("finite sigma");
        for t in &mut m.targets {
            for k in 0..3 {
                t.position[k] += normal.sample(rng);
            }
        }
    }
    m
}

/// Seeded measurement source.
#[derive(Debug, Clone)]
pub struct Perception {
    noise_sigma: f64,
    rng: ChaCha8Rng,
}

impl Perception {
    pub fn new(noise_sigma: f64, seed: u64) -> Self {
        assert!(noise_sigma >= 0.0, "noise sigma must be non-negative");
        Self {
            noise_sigma,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn measure(&mut self, targets: &[TargetState]) -> Measurement {
        measure_targets(targets, self.noise_sigma, &mut self.rng)
    }
}
