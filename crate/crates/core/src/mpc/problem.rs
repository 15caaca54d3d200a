//! Single-shooting transcription of the horizon problem.
//!
//! The decision vector holds, for each of the `N + 1` steps, the drone
//! acceleration (3), gimbal rate (3) and lens rates (3). Stage costs are
//! charged on the states the inputs lead to, `x_1 ..= x_{N+1}`. The gradient
//! is obtained by a backward (adjoint) sweep through the dynamics.

use nalgebra::{Matrix3, Vector3};

use super::{ControlPlan, SolverConfig};
use crate::costs::{far_guide, stage_cost, CostBreakdown, CostError, Objective, StageGradient};
use crate::geometry::{right_jacobian, so3_exp};
use crate::optics::{CameraIntrinsics, LensConstants};
use crate::world::{step_camera, step_drone, ClampFlags, DroneInput, DroneState, IntrinsicsInput};

/// Decision variables per horizon step.
pub const STEP_VARS: usize = 9;

/// Constraint activity over a predicted trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ConstraintReport {
    /// Largest distance by which a planned lens state left the intrinsics box
    /// before clamping.
    pub intrinsics_excess: f64,
    /// Largest intrusion into the minimum target distance.
    pub collision_intrusion: f64,
    /// Largest excursion outside the workspace box.
    pub workspace_excess: f64,
    /// Some planned far limit exceeded the saturation distance while a far
    /// goal was set (see [`far_guide`]).
    pub far_unbounded: bool,
    pub behind_camera: bool,
    /// Total penalty added to the objective.
    pub penalty: f64,
}

impl ConstraintReport {
    pub fn any(&self) -> bool {
        self.intrinsics_excess > 0.0
            || self.collision_intrusion > 0.0
            || self.workspace_excess > 0.0
            || self.far_unbounded
            || self.behind_camera
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub cost: CostBreakdown,
    pub per_step: Vec<CostBreakdown>,
    pub report: ConstraintReport,
    /// Gradient of `cost.total + report.penalty` w.r.t. the flattened plan.
    pub gradient: Vec<f64>,
}

impl Evaluation {
    pub fn objective(&self) -> f64 {
        self.cost.total + self.report.penalty
    }
}

/// Predicted states `x_1 ..= x_{N+1}` under `plan`.
pub fn rollout(
    drone: &DroneState,
    camera: &CameraIntrinsics,
    plan: &ControlPlan,
    config: &SolverConfig,
) -> Vec<(DroneState, CameraIntrinsics)> {
    let mut out = Vec::with_capacity(plan.len());
    let (mut d, mut c) = (*drone, *camera);
    for (ud, uc) in plan.drone.iter().zip(&plan.camera) {
        d = step_drone(&d, ud, config.dt);
        c = step_camera(&c, uc, config.dt, &config.intrinsics).0;
        out.push((d, c));
    }
    out
}

pub struct HorizonProblem<'a> {
    pub drone: DroneState,
    pub camera: CameraIntrinsics,
    pub lens: &'a LensConstants,
    pub objective: &'a Objective,
    pub config: &'a SolverConfig,
}

struct Forward {
    drone: DroneState,
    phi: Vector3<f64>,
    clamped: ClampFlags,
}

impl HorizonProblem<'_> {
    pub fn evaluate(&self, plan: &ControlPlan) -> Result<Evaluation, CostError> {
        let cfg = self.config;
        let dt = cfg.dt;
        let steps = plan.len();
        let box_axes = cfg.intrinsics.axes();

        let mut forward = Vec::with_capacity(steps);
        let mut stage_grads: Vec<StageGradient> = Vec::with_capacity(steps);
        let mut raw_grads: Vec<[f64; 3]> = Vec::with_capacity(steps);
        let mut per_step = Vec::with_capacity(steps);
        let mut report = ConstraintReport::default();
        let mut cost = CostBreakdown::default();

        let (mut d, mut c) = (self.drone, self.camera);
        for (ud, uc) in plan.drone.iter().zip(&plan.camera) {
            let raw = [
                c.focal_length + uc.v_focal * dt,
                c.focus_distance + uc.v_focus * dt,
                c.aperture + uc.v_aperture * dt,
            ];
            let (next_c, clamped) = step_camera(&c, uc, dt, &cfg.intrinsics);
            let next_d = step_drone(&d, ud, dt);
            forward.push(Forward {
                drone: d,
                phi: ud.gimbal_rate * dt,
                clamped,
            });

            let stage = stage_cost(&next_d, &next_c, self.lens, self.objective)?;
            let mut grad = stage.grad;
            let (guide, guide_grad) = far_guide(&next_c, self.lens, self.objective)?;
            if guide > 0.0 {
                report.far_unbounded = true;
                report.penalty += guide;
                for (g, d) in grad.intrinsics.iter_mut().zip(guide_grad) {
                    *g += d;
                }
            }
            report.behind_camera |= stage.behind_camera;
            cost += stage.cost;
            per_step.push(stage.cost);

            let mut g_raw = [0.0; 3];
            for i in 0..3 {
                let b = box_axes[i];
                let v = b.violation(raw[i]);
                if v > 0.0 {
                    report.intrinsics_excess = report.intrinsics_excess.max(v);
                    report.penalty += cfg.intrinsics_penalty_weight * v * v;
                    let sign = if raw[i] < b.lo { -1.0 } else { 1.0 };
                    g_raw[i] = 2.0 * cfg.intrinsics_penalty_weight * v * sign;
                }
            }
            raw_grads.push(g_raw);

            let p = next_d.position;
            for o in &self.objective.obstacles {
                let diff = p - o;
                let dist = diff.norm();
                let v = cfg.min_target_distance - dist;
                if v > 0.0 {
                    report.collision_intrusion = report.collision_intrusion.max(v);
                    report.penalty += cfg.collision_weight * v * v;
                    if dist > 0.0 {
                        grad.position -= diff * (2.0 * cfg.collision_weight * v / dist);
                    }
                }
            }
            for i in 0..3 {
                let b = cfg.workspace[i];
                let v = b.violation(p[i]);
                if v > 0.0 {
                    report.workspace_excess = report.workspace_excess.max(v);
                    report.penalty += cfg.collision_weight * v * v;
                    let sign = if p[i] < b.lo { -1.0 } else { 1.0 };
                    grad.position[i] += 2.0 * cfg.collision_weight * v * sign;
                }
            }
            stage_grads.push(grad);
            d = next_d;
            c = next_c;
        }

        // adjoints of the state after step k
        let mut gradient = vec![0.0; steps * STEP_VARS];
        let mut lam_p = Vector3::zeros();
        let mut lam_v = Vector3::zeros();
        let mut lam_r = Matrix3::zeros();
        let mut lam_c = [0.0; 3];
        for k in (0..steps).rev() {
            let sg = &stage_grads[k];
            let fw = &forward[k];
            lam_p += sg.position;
            lam_r += sg.rotation;
            for (l, g) in lam_c.iter_mut().zip(sg.intrinsics) {
                *l += g;
            }
            let out = &mut gradient[k * STEP_VARS..(k + 1) * STEP_VARS];

            let clamped = [fw.clamped.focal_length, fw.clamped.focus_distance, fw.clamped.aperture];
            for i in 0..3 {
                let g = if clamped[i] { 0.0 } else { lam_c[i] } + raw_grads[k][i];
                out[6 + i] = g * dt;
                lam_c[i] = g;
            }

            let accel = lam_p * (0.5 * dt * dt) + lam_v * dt;
            out[..3].copy_from_slice(accel.as_slice());
            lam_v += lam_p * dt;

            let e = so3_exp(&fw.phi);
            let r = fw.drone.rotation.matrix();
            let a = e.matrix().transpose() * r.transpose() * lam_r;
            let g_phi = Vector3::new(a[(2, 1)] - a[(1, 2)], a[(0, 2)] - a[(2, 0)], a[(1, 0)] - a[(0, 1)]);
            let g_omega = right_jacobian(&fw.phi).transpose() * g_phi * dt;
            out[3..6].copy_from_slice(g_omega.as_slice());
            lam_r *= e.matrix().transpose();
        }

        Ok(Evaluation {
            cost,
            per_step,
            report,
            gradient,
        })
    }
}

impl ControlPlan {
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.len() * STEP_VARS);
        for (d, c) in self.drone.iter().zip(&self.camera) {
            v.extend_from_slice(d.acceleration.as_slice());
            v.extend_from_slice(d.gimbal_rate.as_slice());
            v.extend_from_slice(&c.as_array());
        }
        v
    }

    pub fn from_vec(v: &[f64]) -> Self {
        assert_eq!(v.len() % STEP_VARS, 0, "plan vector length");
        let (drone, camera) = v
            .chunks_exact(STEP_VARS)
            .map(|s| {
                (
                    DroneInput {
                        acceleration: Vector3::new(s[0], s[1], s[2]),
                        gimbal_rate: Vector3::new(s[3], s[4], s[5]),
                    },
                    IntrinsicsInput::from_array([s[6], s[7], s[8]]),
                )
            })
            .unzip();
        Self { drone, camera }
    }
}
