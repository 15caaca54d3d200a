//! Independent oracles and random configurations shared by the integration
//! tests and the acceptance suite.

#![allow(dead_code)]

use std::path::PathBuf;

use nalgebra::Vector3;
use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{Signed, ToPrimitive, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use cinempc::costs::{DepthGoal, DofGoal, ImageTerm, RotationGoal, TargetObjective, DEFAULT_BEHIND_PENALTY};
use cinempc::geometry::{heading, relative_yaw, so3_exp};
use cinempc::mpc::{cost_gradient, SolverConfig, STEP_VARS};
use cinempc::optics::{far_distance, hyperfocal, near_distance, FarLimit};
use cinempc::{CameraIntrinsics, ControlPlan, DroneState, ImagePoint, LensConstants, Objective};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn scenario_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../scenarios")
        .join(name)
}

pub fn load(name: &str) -> cinempc::Scenario {
    let text = std::fs::read_to_string(scenario_path(name)).expect("shipped scenario");
    cinempc::parse_scenario(&text).expect("valid scenario")
}

// ---------------------------------------------------------------------------
// exact thin-lens closed forms

fn q(x: f64) -> BigRational {
    BigRational::from_float(x).expect("finite input")
}

/// Exact depth of field of the rounded inputs, rounded once to f64.
#[derive(Debug, Clone, Copy)]
pub struct ExactDof {
    pub hyperfocal: f64,
    pub near: f64,
    /// `None` when the far limit is unbounded (`F ≥ H`).
    pub far: Option<f64>,
}

pub fn exact_dof(intr: &CameraIntrinsics, lens: &LensConstants) -> ExactDof {
    let (f, focus, a, c) = (
        q(intr.focal_length),
        q(intr.focus_distance),
        q(intr.aperture),
        q(lens.circle_of_confusion),
    );
    let h = &f * &f / (&a * &c) + &f;
    let near = &focus * (&h - &f) / (&h + &focus - BigRational::from_integer(BigInt::from(2)) * &f);
    let denom = &h - &focus;
    let far = if denom.is_positive() && !denom.is_zero() {
        Some((&focus * (&h - &f) / denom).to_f64().unwrap())
    } else {
        None
    };
    ExactDof {
        hyperfocal: h.to_f64().unwrap(),
        near: near.to_f64().unwrap(),
        far,
    }
}

pub fn relative_error(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs() / a.abs().max(b.abs())
    }
}

pub fn random_lens(rng: &mut impl Rng) -> LensConstants {
    LensConstants {
        circle_of_confusion: rng.random_range(1.0e-5..5.0e-5),
        ..LensConstants::default()
    }
}

/// Intrinsics uniformly inside the default admissible box.
pub fn random_intrinsics(rng: &mut impl Rng) -> CameraIntrinsics {
    CameraIntrinsics::new(
        rng.random_range(0.02..=0.20),
        rng.random_range(0.5..=100.0),
        rng.random_range(1.4..=22.0),
    )
}

#[derive(Debug, Clone, Copy, Default)]
pub struct OracleStats {
    pub cases: usize,
    pub unbounded: usize,
    pub worst: f64,
    pub mismatched_kind: usize,
}

/// Compares the library's hyperfocal/near/far with the exact closed forms.
pub fn optics_oracle(cases: usize, seed: u64) -> OracleStats {
    let mut rng = rng(seed);
    let mut stats = OracleStats::default();
    for _ in 0..cases {
        let lens = random_lens(&mut rng);
        let intr = random_intrinsics(&mut rng);
        let exact = exact_dof(&intr, &lens);
        let h = hyperfocal(&intr, &lens).unwrap();
        let n = near_distance(&intr, &lens).unwrap();
        stats.worst = stats
            .worst
            .max(relative_error(h, exact.hyperfocal))
            .max(relative_error(n, exact.near));
        match (far_distance(&intr, &lens).unwrap(), exact.far) {
            (FarLimit::Finite(d), Some(e)) => stats.worst = stats.worst.max(relative_error(d, e)),
            (FarLimit::Unbounded, None) => stats.unbounded += 1,
            _ => stats.mismatched_kind += 1,
        }
        stats.cases += 1;
    }
    stats
}

// ---------------------------------------------------------------------------
// finite differences

/// Central difference of `f` along coordinate `i` with step `h`.
pub fn central_difference(f: &mut impl FnMut(&[f64]) -> f64, x: &[f64], i: usize, h: f64) -> f64 {
    let mut xp = x.to_vec();
    let mut xm = x.to_vec();
    xp[i] += h;
    xm[i] -= h;
    (f(&xp) - f(&xm)) / (2.0 * h)
}

/// Richardson-extrapolated central difference (fourth order).
pub fn richardson_difference(f: &mut impl FnMut(&[f64]) -> f64, x: &[f64], i: usize, h: f64) -> f64 {
    let d1 = central_difference(f, x, i, h);
    let d2 = central_difference(f, x, i, h / 2.0);
    (4.0 * d2 - d1) / 3.0
}

#[derive(Debug, Clone, Copy, Default)]
pub struct GradientCheck {
    /// Components whose difference quotient resolves them to better than
    /// 1e-6 relative; these are held to the relative tolerance.
    pub components: usize,
    /// Components dominated by the rounding noise of the quotient; these are
    /// held to `tolerance · |g| + noise` instead.
    pub noisy: usize,
    /// Components with `|g| ≤ 1e-8`, compared absolutely.
    pub tiny: usize,
    /// Largest relative error over `components`.
    pub worst: f64,
    /// Largest `|g − fd| / (tolerance |g| + noise)` over every component.
    pub worst_bound: f64,
}

impl GradientCheck {
    pub fn merge(&mut self, other: GradientCheck) {
        self.components += other.components;
        self.noisy += other.noisy;
        self.tiny += other.tiny;
        self.worst = self.worst.max(other.worst);
        self.worst_bound = self.worst_bound.max(other.worst_bound);
    }

    pub fn passes(&self, tolerance: f64) -> bool {
        self.worst < tolerance && self.worst_bound <= 1.0
    }
}

/// Compares `analytic` with Richardson-extrapolated central differences of
/// `f` at steps `1e-6 · scale[i]`. The rounding noise of a quotient is about
/// `ε |f| / h`; components it swamps cannot be resolved to `tolerance` by any
/// difference at that step, so they are checked against that noise instead.
pub fn check_gradient(
    mut f: impl FnMut(&[f64]) -> f64,
    x: &[f64],
    analytic: &[f64],
    scale: &[f64],
    tolerance: f64,
) -> GradientCheck {
    let f0 = f(x).abs();
    let mut out = GradientCheck::default();
    for i in 0..x.len() {
        let h = 1e-6 * scale[i];
        let g = analytic[i];
        let fd = richardson_difference(&mut f, x, i, h);
        let noise = 16.0 * f64::EPSILON * f0 / h;
        let bound = tolerance * g.abs() + noise + if g.abs() <= 1e-8 { 1e-8 } else { 0.0 };
        out.worst_bound = out.worst_bound.max((g - fd).abs() / bound);
        if g.abs() <= 1e-8 {
            out.tiny += 1;
        } else if noise <= 1e-6 * g.abs() {
            out.components += 1;
            out.worst = out.worst.max(relative_error(g, fd));
        } else {
            out.noisy += 1;
        }
    }
    out
}

// ---------------------------------------------------------------------------
// random horizon problems

pub struct HorizonCase {
    pub drone: DroneState,
    pub camera: CameraIntrinsics,
    pub plan: ControlPlan,
    pub objective: Objective,
    pub lens: LensConstants,
    pub config: SolverConfig,
}

impl HorizonCase {
    pub fn objective_value(&self, v: &[f64]) -> f64 {
        let plan = ControlPlan::from_vec(v);
        cost_gradient(
            &self.drone,
            &self.camera,
            &plan,
            &self.objective,
            &self.lens,
            &self.config,
        )
        .unwrap()
        .objective()
    }

    /// Step scale per decision variable: the half-width of its input box.
    pub fn scales(&self) -> Vec<f64> {
        let (lo, hi) = self.config.decision_bounds();
        lo.iter().zip(&hi).map(|(l, h)| (h - l) / 2.0).collect()
    }
}

fn random_target(rng: &mut impl Rng, drone: &DroneState, id: &str) -> TargetObjective {
    // somewhere in a ±25° cone, 6 to 15 m ahead of the camera
    let axis = drone.rotation * Vector3::z();
    let spread = Vector3::new(
        rng.random_range(-0.4..0.4),
        rng.random_range(-0.4..0.4),
        rng.random_range(-0.4..0.4),
    );
    let dir = (axis + spread).normalize();
    let position = drone.position + dir * rng.random_range(6.0..15.0);
    let yaw = rng.random_range(-3.0..3.0);
    let image = (0..rng.random_range(1..=2))
        .map(|_| ImageTerm {
            offset: Vector3::new(0.0, 0.0, rng.random_range(0.0..0.9)),
            desired: ImagePoint::new(rng.random_range(200.0..1700.0), rng.random_range(150.0..900.0)),
            weight: rng.random_range(1e-3..1e-2),
        })
        .collect();
    TargetObjective {
        id: id.to_string(),
        position,
        rotation: heading(yaw),
        image,
        depth: Some(DepthGoal {
            desired: rng.random_range(3.0..8.0),
            weight: rng.random_range(0.1..2.0),
        }),
        rotation_goal: Some(RotationGoal {
            desired: relative_yaw(rng.random_range(-3.0..3.0)),
            weight: rng.random_range(0.1..2.0),
        }),
    }
}

/// A random horizon problem whose predicted trajectory stays strictly inside
/// every smooth region (targets in front, intrinsics off the box faces, no
/// collision contact).
pub fn random_horizon_case(rng: &mut impl Rng) -> HorizonCase {
    let config = SolverConfig {
        horizon: rng.random_range(1..=10),
        ..SolverConfig::default()
    };
    let yaw = rng.random_range(-3.0..3.0);
    let tilt = Vector3::new(rng.random_range(-0.2..0.2), rng.random_range(-0.2..0.2), 0.0);
    let drone = DroneState {
        position: Vector3::new(
            rng.random_range(-20.0..20.0),
            rng.random_range(-20.0..20.0),
            rng.random_range(1.0..6.0),
        ),
        velocity: Vector3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-0.3..0.3),
        ),
        rotation: heading(yaw) * so3_exp(&tilt),
    };
    let camera = CameraIntrinsics::new(
        rng.random_range(0.04..0.15),
        rng.random_range(2.0..40.0),
        rng.random_range(3.0..18.0),
    );
    let targets = (0..rng.random_range(1..=2))
        .map(|i| random_target(rng, &drone, &format!("t{i}")))
        .collect();
    let dof_goal = |rng: &mut dyn rand::RngCore| {
        let w: f64 = rng.random_range(0.0..1.0);
        (w > 0.3).then(|| DofGoal {
            desired: rng.random_range(2.0..30.0),
            weight: w,
        })
    };
    let objective = Objective {
        near: dof_goal(rng),
        far: dof_goal(rng),
        targets,
        obstacles: vec![],
        behind_penalty: DEFAULT_BEHIND_PENALTY,
    };
    let steps = config.horizon + 1;
    let (lo, hi) = config.decision_bounds();
    let v: Vec<f64> = (0..steps * STEP_VARS)
        .map(|i| {
            // drone inputs up to a third of their box, lens rates up to a tenth
            let frac = if i % STEP_VARS < 6 { 0.3 } else { 0.1 };
            let mid = (lo[i] + hi[i]) / 2.0;
            mid + frac * (hi[i] - lo[i]) / 2.0 * rng.random_range(-1.0..1.0)
        })
        .collect();
    HorizonCase {
        drone,
        camera,
        plan: ControlPlan::from_vec(&v),
        objective,
        lens: LensConstants::default(),
        config,
    }
}

// ---------------------------------------------------------------------------
// fixed-pose lens subproblems against dense grids

/// Solver configuration in which only the listed lens rates may move
/// (0: focal length, 1: focus distance, 2: aperture); every other input box
/// is degenerate at zero.
pub fn lens_only_config(free: &[usize]) -> SolverConfig {
    let zero = cinempc::world::Interval::new(0.0, 0.0);
    let mut cfg = SolverConfig {
        acceleration: [zero; 3],
        gimbal_rate: [zero; 3],
        ..SolverConfig::default()
    };
    if !free.contains(&0) {
        cfg.focal_rate = zero;
    }
    if !free.contains(&1) {
        cfg.focus_rate = zero;
    }
    if !free.contains(&2) {
        cfg.aperture_rate = zero;
    }
    cfg
}

pub fn still_drone() -> DroneState {
    DroneState {
        position: Vector3::new(0.0, 0.0, 1.5),
        velocity: Vector3::zeros(),
        rotation: heading(0.0),
    }
}

pub fn dof_objective(near: Option<f64>, far: Option<f64>) -> Objective {
    let goal = |d: Option<f64>| d.map(|desired| DofGoal { desired, weight: 1.0 });
    Objective {
        near: goal(near),
        far: goal(far),
        targets: vec![],
        obstacles: vec![],
        behind_penalty: DEFAULT_BEHIND_PENALTY,
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SubproblemOutcome {
    pub terminal_aperture: f64,
    pub terminal_cost: f64,
    pub grid_aperture: f64,
    pub grid_cost: f64,
    /// Grid spacing.
    pub cell: f64,
    pub iterations: usize,
    pub converged: bool,
    /// The returned objective does not exceed the warm start's.
    pub descended: bool,
    /// Every returned input lies in its box.
    pub feasible: bool,
}

impl SubproblemOutcome {
    pub fn aperture_error(&self) -> f64 {
        (self.terminal_aperture - self.grid_aperture).abs()
    }

    pub fn cost_error(&self) -> f64 {
        relative_error(self.terminal_cost, self.grid_cost)
    }
}

pub fn plan_is_feasible(plan: &ControlPlan, config: &SolverConfig) -> bool {
    let (lo, hi) = config.decision_bounds();
    plan.to_vec()
        .iter()
        .zip(lo.iter().zip(&hi))
        .all(|(x, (l, h))| l <= x && x <= h)
}

/// Solves the aperture-only problem from `camera` and compares the terminal
/// aperture and stage cost with a `points`-point grid over the aperture box.
pub fn aperture_subproblem(camera: CameraIntrinsics, objective: &Objective, points: usize) -> SubproblemOutcome {
    use cinempc::costs::stage_cost;
    use cinempc::mpc::{rollout, solve};

    let lens = LensConstants::default();
    let config = lens_only_config(&[2]);
    let drone = still_drone();
    let stage = |a: f64| {
        let c = CameraIntrinsics::new(camera.focal_length, camera.focus_distance, a);
        stage_cost(&drone, &c, &lens, objective).unwrap().cost.total
    };
    let range = config.intrinsics.aperture;
    let cell = (range.hi - range.lo) / (points - 1) as f64;
    let (grid_aperture, grid_cost) = (0..points)
        .map(|i| range.lo + i as f64 * cell)
        .map(|a| (a, stage(a)))
        .fold(
            (f64::NAN, f64::INFINITY),
            |best, (a, j)| if j < best.1 { (a, j) } else { best },
        );

    let warm = ControlPlan::zeros(config.horizon + 1);
    let r = solve(&drone, &camera, objective, &warm, &lens, &config).unwrap();
    let states = rollout(&drone, &camera, &r.plan, &config);
    let terminal = states.last().unwrap().1;
    SubproblemOutcome {
        terminal_aperture: terminal.aperture,
        terminal_cost: stage(terminal.aperture),
        grid_aperture,
        grid_cost,
        cell,
        iterations: r.iterations,
        converged: r.converged,
        descended: r.objective() <= r.initial_objective,
        feasible: plan_is_feasible(&r.plan, &config),
    }
}
