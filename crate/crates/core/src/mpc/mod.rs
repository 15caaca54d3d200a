//! Receding-horizon control of the drone and lens.
//!
//! Each control step solves a box-constrained program in the `N + 1` future
//! inputs, applies the first input and keeps the rest (shifted by one step)
//! as the next initial guess.

mod optimizer;
mod problem;

use log::warn;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use optimizer::{minimize, projected_gradient, Minimum, OptimizerOptions, Termination};
pub use problem::{rollout, ConstraintReport, Evaluation, HorizonProblem, STEP_VARS};

use crate::costs::{CostBreakdown, CostError, Objective};
use crate::optics::{CameraIntrinsics, LensConstants};
use crate::world::{DroneInput, DroneState, Interval, IntrinsicsBox, IntrinsicsInput};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MpcError {
    #[error("invalid solver configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Cost(#[from] CostError),
}

/// Inputs for steps `k₀ ..= k₀ + N`.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlPlan {
    pub drone: Vec<DroneInput>,
    pub camera: Vec<IntrinsicsInput>,
}

impl ControlPlan {
    pub fn zeros(len: usize) -> Self {
        Self {
            drone: vec![DroneInput::default(); len],
            camera: vec![IntrinsicsInput::default(); len],
        }
    }

    pub fn len(&self) -> usize {
        self.drone.len()
    }

    pub fn is_empty(&self) -> bool {
        self.drone.is_empty()
    }
}

/// `[u₀ … u_N] → [u₁ … u_N, u_N]`.
pub fn shift_warm_start(prev: &ControlPlan) -> ControlPlan {
    ControlPlan {
        drone: shift(&prev.drone),
        camera: shift(&prev.camera),
    }
}

fn shift<T: Copy>(v: &[T]) -> Vec<T> {
    match v.split_first() {
        Some((_, rest)) if !rest.is_empty() => {
            let mut out = rest.to_vec();
            out.push(rest[rest.len() - 1]);
            out
        }
        _ => v.to_vec(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LineSearch {
    pub armijo: f64,
    pub backtrack: f64,
    pub max_backtracks: usize,
}

impl Default for LineSearch {
    fn default() -> Self {
        let o = OptimizerOptions::default();
        Self {
            armijo: o.armijo,
            backtrack: o.backtrack,
            max_backtracks: o.max_backtracks,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    /// Horizon length `N`; plans carry `N + 1` inputs.
    pub horizon: usize,
    /// Control period, seconds. Owned by the scenario, not the solver section.
    #[serde(skip)]
    pub dt: f64,
    pub max_iterations: usize,
    pub gradient_tolerance: f64,
    /// Quasi-Newton memory (correction pairs).
    pub memory: usize,
    pub line_search: LineSearch,
    /// Per-axis acceleration bounds, m/s².
    pub acceleration: [Interval; 3],
    /// Per-axis gimbal rate bounds, rad/s.
    pub gimbal_rate: [Interval; 3],
    /// Focal length rate bounds, m/s.
    pub focal_rate: Interval,
    /// Focus distance rate bounds, m/s.
    pub focus_rate: Interval,
    /// Aperture rate bounds, f-stops/s.
    pub aperture_rate: Interval,
    pub intrinsics: IntrinsicsBox,
    pub workspace: [Interval; 3],
    pub min_target_distance: f64,
    /// Weight of the collision and workspace hinge penalties.
    pub collision_weight: f64,
    /// Weight of the penalty on planned lens states leaving the box.
    pub intrinsics_penalty_weight: f64,
    pub warm_start: bool,
}

pub const DEFAULT_DT: f64 = 0.2;

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            horizon: 10,
            dt: DEFAULT_DT,
            max_iterations: 150,
            gradient_tolerance: 1e-6,
            memory: 8,
            line_search: LineSearch::default(),
            acceleration: [Interval::symmetric(3.0); 3],
            gimbal_rate: [Interval::symmetric(1.0); 3],
            focal_rate: Interval::symmetric(0.01),
            focus_rate: Interval::symmetric(5.0),
            aperture_rate: Interval::symmetric(4.0),
            intrinsics: IntrinsicsBox::default(),
            workspace: [Interval::symmetric(1.0e4); 3],
            min_target_distance: 1.5,
            collision_weight: 1.0e6,
            intrinsics_penalty_weight: 1.0e4,
            warm_start: true,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<(), MpcError> {
        let fail = |m: String| Err(MpcError::Config(m));
        if self.horizon < 1 {
            return fail("horizon must be at least 1".into());
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return fail(format!("dt must be positive, got {}", self.dt));
        }
        if !(self.gradient_tolerance > 0.0) {
            return fail("gradient_tolerance must be positive".into());
        }
        let ls = &self.line_search;
        if !(ls.armijo > 0.0 && ls.armijo < 1.0 && ls.backtrack > 0.0 && ls.backtrack < 1.0) {
            return fail("line search factors must lie in (0, 1)".into());
        }
        for (name, b) in self.input_box() {
            if !(b.lo <= b.hi) || !b.lo.is_finite() || !b.hi.is_finite() {
                return fail(format!("empty or non-finite box for {name}: [{}, {}]", b.lo, b.hi));
            }
        }
        for (name, b) in ["focal_length", "focus_distance", "aperture"]
            .into_iter()
            .zip(self.intrinsics.axes())
            .chain(
                ["workspace.x", "workspace.y", "workspace.z"]
                    .into_iter()
                    .zip(self.workspace),
            )
        {
            if !(b.lo <= b.hi) {
                return fail(format!("empty box for {name}: [{}, {}]", b.lo, b.hi));
            }
        }
        let ib = &self.intrinsics;
        if !(ib.focal_length.lo > 0.0 && ib.aperture.lo > 0.0) {
            return fail("focal length and aperture lower bounds must be positive".into());
        }
        if !(ib.focus_distance.lo >= ib.focal_length.hi * (1.0 + 1e-6)) {
            return fail(format!(
                "focus distance lower bound {} must exceed the largest focal length {} by a margin",
                ib.focus_distance.lo, ib.focal_length.hi
            ));
        }
        if self.min_target_distance < 0.0 || self.collision_weight < 0.0 || self.intrinsics_penalty_weight < 0.0 {
            return fail("penalty parameters must be non-negative".into());
        }
        Ok(())
    }

    fn input_box(&self) -> Vec<(&'static str, Interval)> {
        let a = self.acceleration;
        let w = self.gimbal_rate;
        vec![
            ("acceleration.x", a[0]),
            ("acceleration.y", a[1]),
            ("acceleration.z", a[2]),
            ("gimbal_rate.x", w[0]),
            ("gimbal_rate.y", w[1]),
            ("gimbal_rate.z", w[2]),
            ("focal_rate", self.focal_rate),
            ("focus_rate", self.focus_rate),
            ("aperture_rate", self.aperture_rate),
        ]
    }

    /// Lower and upper bounds of the flattened decision vector.
    pub fn decision_bounds(&self) -> (Vec<f64>, Vec<f64>) {
        let per_step = self.input_box();
        let n = (self.horizon + 1) * STEP_VARS;
        let lower = (0..n).map(|i| per_step[i % STEP_VARS].1.lo).collect();
        let upper = (0..n).map(|i| per_step[i % STEP_VARS].1.hi).collect();
        (lower, upper)
    }

    pub fn optimizer_options(&self) -> OptimizerOptions {
        OptimizerOptions {
            max_iterations: self.max_iterations,
            gradient_tolerance: self.gradient_tolerance,
            memory: self.memory,
            armijo: self.line_search.armijo,
            backtrack: self.line_search.backtrack,
            max_backtracks: self.line_search.max_backtracks,
        }
    }

    pub fn project_plan(&self, plan: &ControlPlan) -> ControlPlan {
        let (lower, upper) = self.decision_bounds();
        let mut v = plan.to_vec();
        optimizer::project(&mut v, &lower, &upper);
        ControlPlan::from_vec(&v)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveResult {
    pub plan: ControlPlan,
    /// Stage costs summed over the horizon.
    pub cost: CostBreakdown,
    pub per_step: Vec<CostBreakdown>,
    pub report: ConstraintReport,
    /// Objective of the (projected) initial guess.
    pub initial_objective: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl SolveResult {
    pub fn objective(&self) -> f64 {
        self.cost.total + self.report.penalty
    }
}

/// Objective value and gradient of `plan`, the latter w.r.t. the flattened
/// inputs (see [`ControlPlan::to_vec`]).
pub fn cost_gradient(
    drone: &DroneState,
    camera: &CameraIntrinsics,
    plan: &ControlPlan,
    objective: &Objective,
    lens: &LensConstants,
    config: &SolverConfig,
) -> Result<Evaluation, CostError> {
    HorizonProblem {
        drone: *drone,
        camera: *camera,
        lens,
        objective,
        config,
    }
    .evaluate(plan)
}

/// Optimizes the horizon plan starting from `warm`.
pub fn solve(
    drone: &DroneState,
    camera: &CameraIntrinsics,
    objective: &Objective,
    warm: &ControlPlan,
    lens: &LensConstants,
    config: &SolverConfig,
) -> Result<SolveResult, MpcError> {
    config.validate()?;
    let expected = config.horizon + 1;
    if warm.len() != expected {
        return Err(MpcError::Config(format!(
            "warm plan has {} steps, horizon needs {expected}",
            warm.len()
        )));
    }
    let camera0 = config.intrinsics.clamp(camera);
    if camera0 != *camera {
        warn!("initial intrinsics {camera:?} outside the box; projected to {camera0:?}");
    }
    let problem = HorizonProblem {
        drone: *drone,
        camera: camera0,
        lens,
        objective,
        config,
    };
    let (lower, upper) = config.decision_bounds();
    let scale: Vec<f64> = lower
        .iter()
        .zip(&upper)
        .map(|(lo, hi)| if hi > lo { (hi - lo) / 2.0 } else { 1.0 })
        .collect();
    let to_plan = |y: &[f64]| -> ControlPlan {
        let mut z: Vec<f64> = y.iter().zip(&scale).map(|(a, s)| a * s).collect();
        optimizer::project(&mut z, &lower, &upper);
        ControlPlan::from_vec(&z)
    };

    let warm = config.project_plan(warm);
    let start = problem.evaluate(&warm)?;
    let y0: Vec<f64> = warm.to_vec().iter().zip(&scale).map(|(z, s)| z / s).collect();
    let y_lower: Vec<f64> = lower.iter().zip(&scale).map(|(z, s)| z / s).collect();
    let y_upper: Vec<f64> = upper.iter().zip(&scale).map(|(z, s)| z / s).collect();

    let minimum = minimize(
        |y: &[f64]| -> Result<(f64, Vec<f64>), CostError> {
            let e = problem.evaluate(&to_plan(y))?;
            let g = e.gradient.iter().zip(&scale).map(|(g, s)| g * s).collect();
            Ok((e.objective(), g))
        },
        &y0,
        &y_lower,
        &y_upper,
        &config.optimizer_options(),
    )?;

    let mut plan = to_plan(&minimum.x);
    let mut end = problem.evaluate(&plan)?;
    if end.objective() > start.objective() {
        plan = warm;
        end = start.clone();
    }
    Ok(SolveResult {
        plan,
        cost: end.cost,
        per_step: end.per_step,
        report: end.report,
        initial_objective: start.objective(),
        iterations: minimum.iterations,
        converged: minimum.converged(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControlOutput {
    pub drone: DroneInput,
    pub camera: IntrinsicsInput,
    pub result: SolveResult,
}

/// Closed-loop wrapper holding the warm start between steps.
#[derive(Debug, Clone)]
pub struct Controller {
    config: SolverConfig,
    lens: LensConstants,
    warm: ControlPlan,
}

impl Controller {
    pub fn new(config: SolverConfig, lens: LensConstants) -> Result<Self, MpcError> {
        config.validate()?;
        let warm = config.project_plan(&ControlPlan::zeros(config.horizon + 1));
        Ok(Self { config, lens, warm })
    }

    pub fn config(&self) -> &SolverConfig {
        &self.config
    }

    pub fn warm_plan(&self) -> &ControlPlan {
        &self.warm
    }

    /// Solves from the current state and returns the inputs to apply now.
    pub fn control_step(
        &mut self,
        drone: &DroneState,
        camera: &CameraIntrinsics,
        objective: &Objective,
    ) -> Result<ControlOutput, MpcError> {
        let result = solve(drone, camera, objective, &self.warm, &self.lens, &self.config)?;
        self.warm = if self.config.warm_start {
            shift_warm_start(&result.plan)
        } else {
            self.config.project_plan(&ControlPlan::zeros(self.config.horizon + 1))
        };
        Ok(ControlOutput {
            drone: result.plan.drone[0],
            camera: result.plan.camera[0],
            result,
        })
    }
}
