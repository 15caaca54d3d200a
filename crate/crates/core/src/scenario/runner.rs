use log::{debug, info};
use nalgebra::Vector3;
use thiserror::Error;

use super::Scenario;
use crate::costs::{stage_cost, CostBreakdown, CostError};
use crate::mpc::{Controller, MpcError};
use crate::optics::{dof_interval, CameraIntrinsics, DofInterval};
use crate::world::{
    step_camera, step_drone, step_targets, ClampFlags, DroneInput, DroneState, IntrinsicsInput, Measurement, Perception,
};

/// True and measured position of one target at a record.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TargetSample {
    pub true_position: Vector3<f64>,
    pub measured_position: Vector3<f64>,
}

/// One closed-loop step. State, lens and costs are those at `time`, before
/// the inputs are applied; the clamp flags report what applying them did.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub time: f64,
    /// Index of the active sequence.
    pub sequence: usize,
    pub drone: DroneState,
    pub camera: CameraIntrinsics,
    pub dof: DofInterval,
    /// Desired limits as resolved by the controller; `None` when the
    /// directive has no such goal.
    pub desired_near: Option<f64>,
    pub desired_far: Option<f64>,
    /// Cost of the current state under the active directive and the true
    /// target positions.
    pub cost: CostBreakdown,
    pub drone_input: DroneInput,
    pub camera_input: IntrinsicsInput,
    pub iterations: usize,
    pub converged: bool,
    pub clamped: ClampFlags,
    /// Penalty (collision, workspace, intrinsics box) in the solved plan.
    pub penalty: f64,
    /// Some planned state had a target behind the camera.
    pub behind_camera: bool,
    /// One entry per scenario target, in scenario order.
    pub targets: Vec<TargetSample>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trace {
    pub target_ids: Vec<String>,
    pub records: Vec<TraceRecord>,
}

#[derive(Debug, Error)]
pub enum RunFailure {
    #[error(transparent)]
    Solver(#[from] MpcError),
    #[error(transparent)]
    Cost(#[from] CostError),
    #[error("state became non-finite at t = {0}")]
    NonFinite(f64),
}

/// A run that stopped early; `partial` holds the records taken so far.
#[derive(Debug, Error)]
#[error("run aborted at t = {time}: {cause}")]
pub struct RunError {
    pub time: f64,
    pub cause: RunFailure,
    pub partial: Trace,
}

/// Simulates `scenario` in closed loop, one record per control step at
/// `t = k·dt`, `k = 0 ..= steps`.
pub fn run(scenario: &Scenario) -> Result<Trace, RunError> {
    let mut trace = Trace {
        target_ids: scenario.targets.iter().map(|t| t.id.clone()).collect(),
        records: Vec::with_capacity(scenario.steps() + 1),
    };
    let mut targets = scenario.targets.clone();
    let mut perception = Perception::new(scenario.noise_sigma, scenario.seed);
    let mut controller = match Controller::new(scenario.solver.clone(), scenario.lens) {
        Ok(c) => c,
        Err(e) => {
            return Err(RunError {
                time: 0.0,
                cause: e.into(),
                partial: trace,
            })
        }
    };
    let mut drone = scenario.drone;
    let mut camera = scenario.camera;
    let mut active = usize::MAX;

    for k in 0..=scenario.steps() {
        let time = k as f64 * scenario.dt;
        match step(
            scenario,
            time,
            &mut targets,
            &mut perception,
            &mut controller,
            &drone,
            &camera,
        ) {
            Ok((record, next_drone, next_camera)) => {
                if record.sequence != active {
                    active = record.sequence;
                    info!(
                        "t = {time:.2} s: sequence {active} `{}`",
                        scenario.sequences[active].label
                    );
                }
                debug!(
                    "t = {time:.2} s: cost {:.6e}, {} iterations",
                    record.cost.total, record.iterations
                );
                trace.records.push(record);
                drone = next_drone;
                camera = next_camera;
            }
            Err(cause) => {
                return Err(RunError {
                    time,
                    cause,
                    partial: trace,
                })
            }
        }
    }
    Ok(trace)
}

fn step(
    scenario: &Scenario,
    time: f64,
    targets: &mut [crate::world::TargetState],
    perception: &mut Perception,
    controller: &mut Controller,
    drone: &DroneState,
    camera: &CameraIntrinsics,
) -> Result<(TraceRecord, DroneState, CameraIntrinsics), RunFailure> {
    step_targets(targets, time);
    let measurement = perception.measure(targets);
    let sequence = scenario.sequence_at(time);
    let directive = &scenario.sequences[sequence].directive;
    let pose = drone.pose();

    let objective = directive.resolve(&measurement, targets, &pose)?;
    let truth = directive.resolve(&Measurement::exact(targets), targets, &pose)?;
    let cost = stage_cost(drone, camera, &scenario.lens, &truth)?.cost;
    let dof = dof_interval(camera, &scenario.lens).map_err(CostError::from)?;

    let out = controller.control_step(drone, camera, &objective)?;
    let next_drone = step_drone(drone, &out.drone, scenario.dt);
    let (next_camera, clamped) = step_camera(camera, &out.camera, scenario.dt, &scenario.solver.intrinsics);
    let finite =
        next_drone.is_finite() && next_camera.as_array().iter().all(|x| x.is_finite()) && cost.total.is_finite();
    if !finite {
        return Err(RunFailure::NonFinite(time));
    }

    let record = TraceRecord {
        time,
        sequence,
        drone: *drone,
        camera: *camera,
        dof,
        desired_near: objective.near.map(|g| g.desired),
        desired_far: objective.far.map(|g| g.desired),
        cost,
        drone_input: out.drone,
        camera_input: out.camera,
        iterations: out.result.iterations,
        converged: out.result.converged,
        clamped,
        penalty: out.result.report.penalty,
        behind_camera: out.result.report.behind_camera,
        targets: targets
            .iter()
            .zip(&measurement.targets)
            .map(|(t, m)| TargetSample {
                true_position: t.pose.position,
                measured_position: m.position,
            })
            .collect(),
    };
    Ok((record, next_drone, next_camera))
}
