//! Model predictive control of a drone-borne cinematographic camera.
//!
//! The controller jointly plans the drone trajectory, gimbal orientation and
//! the lens intrinsics (focal length, focus distance, aperture) so that the
//! recorded image follows artistic directives: which depths are in focus,
//! where targets sit in the frame, and from which distance and angle they
//! are filmed.
//!
//! * [`optics`]: thin-lens depth of field
//! * [`geometry`]: poses, rotations and projection
//! * [`world`]: dynamics, scripted targets and noisy perception
//! * [`costs`]: shot directives and cost terms
//! * [`mpc`]: the receding-horizon solver
//! * [`scenario`]: scenario files, the closed-loop runner, traces and plots

// `!(x > y)` is used on purpose throughout: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod costs;
pub mod geometry;
pub mod mpc;
pub mod optics;
pub mod scenario;
pub mod world;

pub use costs::{CostBreakdown, Objective, ShotDirective};
pub use geometry::{ImagePoint, Pose, Rotation};
pub use mpc::{ControlPlan, Controller, SolveResult, SolverConfig};
pub use optics::{CameraIntrinsics, DofInterval, LensConstants};
pub use scenario::{parse_scenario, run, Scenario, Trace, TraceRecord};
pub use world::{DroneInput, DroneState, IntrinsicsInput, TargetState};
