//! Shot directives and the three cinematographic cost terms.
//!
//! * depth of field: `w_n (D_n − D_n*)² + w_f (sat D_f − sat D_f*)²`
//! * composition: `Σ w_im ‖im − im*‖²` over target feature points
//! * canonical shot: `Σ w_R ‖R_dtᵀ R_dt* − I‖_F + w_d (d − d*)²`
//!
//! [`ShotDirective`] is what a scenario file describes; it may anchor the
//! desired near/far limits to a target's depth. [`ShotDirective::resolve`]
//! turns it into an [`Objective`] with every desired value numeric, using the
//! latest measurement. The objective is held fixed over a prediction horizon.

use std::ops::{Add, AddAssign};

use log::debug;
use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{relative_position, ImagePoint, Pose, Rotation};
use crate::optics::{
    far_distance, far_partials, inverse_far_distance, inverse_far_partials, near_distance, near_partials,
    CameraIntrinsics, FarLimit, LensConstants, OpticsError,
};
use crate::world::{DroneState, Measurement, TargetState};

/// Far distances are compared after `D_MAX · tanh(D / D_MAX)`.
pub const FAR_SATURATION: f64 = 1.0e3;

pub const DEFAULT_BEHIND_PENALTY: f64 = 1.0e8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CostError {
    #[error("directive references unknown target `{0}`")]
    UnknownTarget(String),
    #[error("target `{target}` has no feature `{feature}`")]
    UnknownFeature { target: String, feature: String },
    #[error("weight `{name}` must be finite and non-negative, got {value}")]
    BadWeight { name: String, value: f64 },
    #[error("directive has no positive weight")]
    NoPositiveWeight,
    #[error(transparent)]
    Optics(#[from] OpticsError),
}

/// Desired near/far limit: a fixed distance or the live depth of a target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum DesiredDistance {
    Fixed(f64),
    TargetDepth(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct DistanceGoal {
    pub desired: DesiredDistance,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageGoal {
    /// `None` aims the target centroid.
    pub feature: Option<String>,
    pub point: ImagePoint,
    pub weight: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DepthGoal {
    pub desired: f64,
    pub weight: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RotationGoal {
    /// Desired camera-from-target rotation `R_dt*`.
    pub desired: Rotation,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TargetGoals {
    pub id: String,
    pub image: Vec<ImageGoal>,
    pub depth: Option<DepthGoal>,
    pub rotation: Option<RotationGoal>,
}

impl TargetGoals {
    pub fn new(id: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            image: Vec::new(),
            depth: None,
            rotation: None,
        }
    }
}

/// Desired values and weights for one sequence of a shot.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ShotDirective {
    pub near: Option<DistanceGoal>,
    pub far: Option<DistanceGoal>,
    pub targets: Vec<TargetGoals>,
}

fn check_weight(name: impl FnOnce() -> String, w: f64) -> Result<bool, CostError> {
    if w.is_finite() && w >= 0.0 {
        Ok(w > 0.0)
    } else {
        Err(CostError::BadWeight { name: name(), value: w })
    }
}

impl ShotDirective {
    /// Checks weights and that every referenced target and feature exists
    /// in `catalog`.
    pub fn validate(&self, catalog: &[TargetState]) -> Result<(), CostError> {
        let mut any = false;
        let target = |id: &str| {
            catalog
                .iter()
                .find(|t| t.id == id)
                .ok_or_else(|| CostError::UnknownTarget(id.to_string()))
        };
        for (name, goal) in [("near", &self.near), ("far", &self.far)] {
            if let Some(g) = goal {
                any |= check_weight(|| format!("{name}_weight"), g.weight)?;
                if let DesiredDistance::TargetDepth(id) = &g.desired {
                    target(id)?;
                }
            }
        }
        for goals in &self.targets {
            let t = target(&goals.id)?;
            for img in &goals.image {
                any |= check_weight(|| format!("{}.image.weight", goals.id), img.weight)?;
                if let Some(feature) = &img.feature {
                    if t.feature_offset(feature).is_none() {
                        return Err(CostError::UnknownFeature {
                            target: goals.id.clone(),
                            feature: feature.clone(),
                        });
                    }
                }
            }
            if let Some(d) = goals.depth {
                any |= check_weight(|| format!("{}.depth_weight", goals.id), d.weight)?;
            }
            if let Some(r) = goals.rotation {
                any |= check_weight(|| format!("{}.rotation_weight", goals.id), r.weight)?;
            }
        }
        if any {
            Ok(())
        } else {
            Err(CostError::NoPositiveWeight)
        }
    }

    /// Freezes the directive against the latest measurement. Target-anchored
    /// distances use the target's axial depth from `camera` (its Euclidean
    /// distance if it is behind the camera).
    pub fn resolve(
        &self,
        measurement: &Measurement,
        catalog: &[TargetState],
        camera: &Pose,
    ) -> Result<Objective, CostError> {
        let depth_of = |id: &str| -> Result<f64, CostError> {
            let m = measurement
                .get(id)
                .ok_or_else(|| CostError::UnknownTarget(id.to_string()))?;
            let p = relative_position(camera, &m.position);
            Ok(if p.z > 0.0 { p.z } else { p.norm() })
        };
        let dof = |g: &Option<DistanceGoal>| -> Result<Option<DofGoal>, CostError> {
            g.as_ref()
                .map(|g| {
                    let desired = match &g.desired {
                        DesiredDistance::Fixed(d) => *d,
                        DesiredDistance::TargetDepth(id) => depth_of(id)?,
                    };
                    Ok(DofGoal {
                        desired,
                        weight: g.weight,
                    })
                })
                .transpose()
        };
        let mut targets = Vec::with_capacity(self.targets.len());
        for goals in &self.targets {
            let m = measurement
                .get(&goals.id)
                .ok_or_else(|| CostError::UnknownTarget(goals.id.clone()))?;
            let mut image = Vec::with_capacity(goals.image.len());
            for g in &goals.image {
                let offset = match &g.feature {
                    None => 0.0,
                    Some(name) => catalog
                        .iter()
                        .find(|t| t.id == goals.id)
                        .and_then(|t| t.feature_offset(name))
                        .ok_or_else(|| CostError::UnknownFeature {
                            target: goals.id.clone(),
                            feature: name.clone(),
                        })?,
                };
                image.push(ImageTerm {
                    offset: Vector3::new(0.0, 0.0, offset),
                    desired: g.point,
                    weight: g.weight,
                });
            }
            targets.push(TargetObjective {
                id: goals.id.clone(),
                position: m.position,
                rotation: m.rotation,
                image,
                depth: goals.depth,
                rotation_goal: goals.rotation,
            });
        }
        Ok(Objective {
            near: dof(&self.near)?,
            far: dof(&self.far)?,
            targets,
            obstacles: measurement.targets.iter().map(|t| t.position).collect(),
            behind_penalty: DEFAULT_BEHIND_PENALTY,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DofGoal {
    pub desired: f64,
    pub weight: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImageTerm {
    /// World-frame offset of the feature from the target centroid.
    pub offset: Vector3<f64>,
    pub desired: ImagePoint,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TargetObjective {
    pub id: String,
    pub position: Vector3<f64>,
    pub rotation: Rotation,
    pub image: Vec<ImageTerm>,
    pub depth: Option<DepthGoal>,
    pub rotation_goal: Option<RotationGoal>,
}

/// A directive with all desired values numeric.
#[derive(Debug, Clone, PartialEq)]
pub struct Objective {
    pub near: Option<DofGoal>,
    pub far: Option<DofGoal>,
    pub targets: Vec<TargetObjective>,
    /// Measured positions of every target, for collision avoidance.
    pub obstacles: Vec<Vector3<f64>>,
    /// Cost charged per weighted term whose point lies behind the camera.
    pub behind_penalty: f64,
}

impl Objective {
    pub fn scaled(&self, k: f64) -> Self {
        let mut o = self.clone();
        for g in [&mut o.near, &mut o.far].into_iter().flatten() {
            g.weight *= k;
        }
        for t in &mut o.targets {
            for i in &mut t.image {
                i.weight *= k;
            }
            if let Some(d) = &mut t.depth {
                d.weight *= k;
            }
            if let Some(r) = &mut t.rotation_goal {
                r.weight *= k;
            }
        }
        o
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CostBreakdown {
    pub j_dof: f64,
    pub j_im: f64,
    pub j_p: f64,
    pub total: f64,
}

impl CostBreakdown {
    pub fn new(j_dof: f64, j_im: f64, j_p: f64) -> Self {
        Self {
            j_dof,
            j_im,
            j_p,
            total: j_dof + j_im + j_p,
        }
    }
}

impl Add for CostBreakdown {
    type Output = Self;

    fn add(self, o: Self) -> Self {
        Self::new(self.j_dof + o.j_dof, self.j_im + o.j_im, self.j_p + o.j_p)
    }
}

impl AddAssign for CostBreakdown {
    fn add_assign(&mut self, o: Self) {
        *self = *self + o;
    }
}

/// Euclidean gradient of a stage cost with respect to the state that
/// drives it. `rotation` treats the nine matrix entries as free.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StageGradient {
    pub position: Vector3<f64>,
    pub rotation: Matrix3<f64>,
    pub intrinsics: [f64; 3],
}

impl Default for StageGradient {
    fn default() -> Self {
        Self {
            position: Vector3::zeros(),
            rotation: Matrix3::zeros(),
            intrinsics: [0.0; 3],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StageCost {
    pub cost: CostBreakdown,
    pub grad: StageGradient,
    pub behind_camera: bool,
}

pub fn saturate(d: f64) -> f64 {
    FAR_SATURATION * (d / FAR_SATURATION).tanh()
}

fn saturate_slope(d: f64) -> f64 {
    let t = (d / FAR_SATURATION).tanh();
    1.0 - t * t
}

fn dof_term(
    intr: &CameraIntrinsics,
    lens: &LensConstants,
    obj: &Objective,
    grad: &mut [f64; 3],
) -> Result<f64, OpticsError> {
    let mut j = 0.0;
    if let Some(g) = obj.near.filter(|g| g.weight > 0.0) {
        let e = near_distance(intr, lens)? - g.desired;
        j += g.weight * e * e;
        let p = near_partials(intr, lens)?;
        for k in 0..3 {
            grad[k] += 2.0 * g.weight * e * p[k];
        }
    }
    if let Some(g) = obj.far.filter(|g| g.weight > 0.0) {
        let desired = saturate(g.desired);
        match far_distance(intr, lens)? {
            FarLimit::Finite(d) => {
                let e = saturate(d) - desired;
                j += g.weight * e * e;
                let slope = saturate_slope(d);
                if slope > 0.0 {
                    let p = far_partials(intr, lens)?;
                    for k in 0..3 {
                        grad[k] += 2.0 * g.weight * e * slope * p[k];
                    }
                }
            }
            FarLimit::Unbounded => {
                let e = FAR_SATURATION - desired;
                j += g.weight * e * e;
            }
        }
    }
    Ok(j)
}

/// Composition cost of one target; returns `(cost, behind)`.
fn image_term(
    drone: &Pose,
    f: f64,
    lens: &LensConstants,
    target: &TargetObjective,
    penalty: f64,
    grad: &mut StageGradient,
) -> (f64, bool) {
    let bf = lens.beta() * f;
    let s = lens.skew;
    let [cu, cv] = lens.principal_point;
    let rt = drone.rotation.matrix().transpose();
    let (mut j, mut behind) = (0.0, false);
    for term in target.image.iter().filter(|t| t.weight > 0.0) {
        let q = target.position + term.offset - drone.position;
        let p = rt * q;
        if !(p.z > 0.0) {
            j += penalty;
            behind = true;
            continue;
        }
        let (x, y, z) = (p.x, p.y, p.z);
        let u = cu + (bf * x + s * y) / z;
        let v = cv + bf * y / z;
        let (du, dv) = (u - term.desired.u, v - term.desired.v);
        let w = term.weight;
        j += w * (du * du + dv * dv);
        let (eu, ev) = (2.0 * w * du, 2.0 * w * dv);
        let g_cam = Vector3::new(
            eu * bf / z,
            (eu * s + ev * bf) / z,
            -(eu * (bf * x + s * y) + ev * bf * y) / (z * z),
        );
        grad.position -= drone.rotation.matrix() * g_cam;
        grad.rotation += q * g_cam.transpose();
        let beta = lens.beta();
        grad.intrinsics[0] += eu * beta * x / z + ev * beta * y / z;
    }
    (j, behind)
}

fn shot_term(drone: &Pose, target: &TargetObjective, penalty: f64, grad: &mut StageGradient) -> (f64, bool) {
    let (mut j, mut behind) = (0.0, false);
    if let Some(d) = target.depth.filter(|d| d.weight > 0.0) {
        let q = target.position - drone.position;
        let z = drone.rotation.matrix().column(2).dot(&q);
        if z > 0.0 {
            let e = z - d.desired;
            j += d.weight * e * e;
            let g_cam = Vector3::new(0.0, 0.0, 2.0 * d.weight * e);
            grad.position -= drone.rotation.matrix() * g_cam;
            grad.rotation += q * g_cam.transpose();
        } else {
            j += penalty;
            behind = true;
        }
    }
    if let Some(r) = target.rotation_goal.filter(|r| r.weight > 0.0) {
        let rt = target.rotation.matrix();
        let rs = r.desired.matrix();
        let m = rt.transpose() * drone.rotation.matrix() * rs - Matrix3::identity();
        let dist = m.norm();
        j += r.weight * dist;
        // subgradient zero at the kink
        if dist > 0.0 {
            grad.rotation += rt * m * rs.transpose() * (r.weight / dist);
        }
    }
    (j, behind)
}

/// Solver-side companion of the far-limit term. Past `D_f ≈ D_MAX` (and
/// beyond the hyperfocal distance, where the far limit is unbounded) the
/// saturated cost is flat, so it carries no gradient back toward a finite
/// desired far limit. This hinge on the inverse far distance `x = 1/D_f`,
/// `w_f (D_MAX − D_MAX² x)²` for `x < 1/D_MAX`, restores one; it is zero
/// wherever the far limit is below `D_MAX`. Returns the value and its
/// gradient w.r.t. (f, F, A).
pub fn far_guide(
    intr: &CameraIntrinsics,
    lens: &LensConstants,
    obj: &Objective,
) -> Result<(f64, [f64; 3]), OpticsError> {
    let Some(g) = obj.far.filter(|g| g.weight > 0.0) else {
        return Ok((0.0, [0.0; 3]));
    };
    let x = inverse_far_distance(intr, lens)?;
    let gap = FAR_SATURATION - FAR_SATURATION * FAR_SATURATION * x;
    if gap <= 0.0 {
        return Ok((0.0, [0.0; 3]));
    }
    let dx = inverse_far_partials(intr, lens)?;
    let k = -2.0 * g.weight * gap * FAR_SATURATION * FAR_SATURATION;
    Ok((g.weight * gap * gap, dx.map(|d| k * d)))
}

/// Cost of one predicted state and its gradient.
pub fn stage_cost(
    drone: &DroneState,
    intr: &CameraIntrinsics,
    lens: &LensConstants,
    obj: &Objective,
) -> Result<StageCost, CostError> {
    let pose = drone.pose();
    let mut grad = StageGradient::default();
    let j_dof = dof_term(intr, lens, obj, &mut grad.intrinsics)?;
    let (mut j_im, mut j_p, mut behind) = (0.0, 0.0, false);
    for t in &obj.targets {
        let (ji, bi) = image_term(&pose, intr.focal_length, lens, t, obj.behind_penalty, &mut grad);
        let (jp, bp) = shot_term(&pose, t, obj.behind_penalty, &mut grad);
        j_im += ji;
        j_p += jp;
        behind |= bi || bp;
    }
    if behind {
        debug!("weighted target behind camera at {:?}", drone.position.as_slice());
    }
    Ok(StageCost {
        cost: CostBreakdown::new(j_dof, j_im, j_p),
        grad,
        behind_camera: behind,
    })
}

pub fn j_dof(intr: &CameraIntrinsics, lens: &LensConstants, obj: &Objective) -> Result<f64, CostError> {
    Ok(dof_term(intr, lens, obj, &mut [0.0; 3])?)
}

pub fn j_im(drone: &DroneState, f: f64, lens: &LensConstants, obj: &Objective) -> f64 {
    let mut g = StageGradient::default();
    obj.targets
        .iter()
        .map(|t| image_term(&drone.pose(), f, lens, t, obj.behind_penalty, &mut g).0)
        .sum()
}

pub fn j_p(drone: &DroneState, obj: &Objective) -> f64 {
    let mut g = StageGradient::default();
    obj.targets
        .iter()
        .map(|t| shot_term(&drone.pose(), t, obj.behind_penalty, &mut g).0)
        .sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct HorizonCost {
    pub total: CostBreakdown,
    pub per_step: Vec<CostBreakdown>,
}

/// Sum of stage costs over a predicted trajectory.
pub fn total_cost(
    states: &[(DroneState, CameraIntrinsics)],
    lens: &LensConstants,
    obj: &Objective,
) -> Result<HorizonCost, CostError> {
    let per_step = states
        .iter()
        .map(|(d, c)| stage_cost(d, c, lens, obj).map(|s| s.cost))
        .collect::<Result<Vec<_>, _>>()?;
    let total = per_step.iter().fold(CostBreakdown::default(), |a, &b| a + b);
    Ok(HorizonCost { total, per_step })
}
