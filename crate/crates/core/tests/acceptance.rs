//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any
//! criterion fails. Run with `cargo test -p cinempc --test acceptance`.

mod common;

use std::time::{Duration, Instant};

use nalgebra::Vector3;

use cinempc::geometry::{project, relative_position, relative_rotation, rotation_distance, Pose};
use cinempc::mpc::cost_gradient;
use cinempc::optics::{dof_interval, far_distance, far_partials, hyperfocal, near_distance, near_partials, FarLimit};
use cinempc::scenario::{run, write_trace};
use cinempc::{CameraIntrinsics, Trace};
use common::*;

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: String) -> Outcome {
    Outcome { passed, detail }
}

fn optics_equivalence() -> Outcome {
    let s = optics_oracle(10_000, 1);
    outcome(
        s.mismatched_kind == 0 && s.worst <= 1e-12,
        format!(
            "{} lenses ({} unbounded), worst relative error {:.2e} (limit 1e-12), {} bounded/unbounded disagreements",
            s.cases, s.unbounded, s.worst, s.mismatched_kind
        ),
    )
}

fn hyperfocal_identity() -> Outcome {
    let mut rng = rng(2);
    let (mut worst, mut bounded) = (0.0_f64, 0);
    for _ in 0..1_000 {
        let lens = random_lens(&mut rng);
        let mut intr = random_intrinsics(&mut rng);
        intr.focus_distance = hyperfocal(&intr, &lens).unwrap();
        let n = near_distance(&intr, &lens).unwrap();
        worst = worst.max(relative_error(n, intr.focus_distance / 2.0));
        if far_distance(&intr, &lens).unwrap() != FarLimit::Unbounded {
            bounded += 1;
        }
    }
    outcome(
        worst <= 1e-9 && bounded == 0,
        format!("1000 lenses, worst |D_n − H/2| relative {worst:.2e} (limit 1e-9), {bounded} bounded far limits"),
    )
}

fn gradient_checks() -> Outcome {
    const TOL: f64 = 1e-5;
    let mut rng = rng(3);
    let mut dof = GradientCheck::default();
    for _ in 0..200 {
        let lens = random_lens(&mut rng);
        let intr = random_intrinsics(&mut rng);
        let x = intr.as_array();
        let at = |v: &[f64]| CameraIntrinsics::new(v[0], v[1], v[2]);
        dof.merge(check_gradient(
            |v| near_distance(&at(v), &lens).unwrap(),
            &x,
            &near_partials(&intr, &lens).unwrap(),
            &x,
            TOL,
        ));
        if exact_dof(&intr, &lens).hyperfocal > 1.01 * intr.focus_distance {
            dof.merge(check_gradient(
                |v| far_distance(&at(v), &lens).unwrap().value(),
                &x,
                &far_partials(&intr, &lens).unwrap(),
                &x,
                TOL,
            ));
        }
    }
    let mut horizon = GradientCheck::default();
    for _ in 0..200 {
        let case = random_horizon_case(&mut rng);
        let e = cost_gradient(
            &case.drone,
            &case.camera,
            &case.plan,
            &case.objective,
            &case.lens,
            &case.config,
        )
        .unwrap();
        horizon.merge(check_gradient(
            |v| case.objective_value(v),
            &case.plan.to_vec(),
            &e.gradient,
            &case.scales(),
            TOL,
        ));
    }
    outcome(
        dof.passes(TOL) && horizon.passes(TOL),
        format!(
            "dof partials: {} components, worst relative {:.2e}; horizon cost: {} components, worst relative {:.2e}, \
             {} noise-limited components within bound (worst ratio {:.2}) (limit 1e-5)",
            dof.components,
            dof.worst,
            horizon.components,
            horizon.worst,
            horizon.noisy,
            horizon.worst_bound.max(dof.worst_bound)
        ),
    )
}

fn solver_vs_grid() -> Outcome {
    let camera = CameraIntrinsics::new(0.035, 5.0, 8.0);
    let reachable = aperture_subproblem(camera, &dof_objective(None, Some(6.5)), 100_000);
    let conflicting = aperture_subproblem(camera, &dof_objective(Some(4.0), Some(6.5)), 100_000);
    let within_cell = |o: &SubproblemOutcome| o.aperture_error() <= o.cell;
    // with a zero minimum only an excess over the grid counts as an error
    let reachable_cost = reachable.terminal_cost <= reachable.grid_cost * (1.0 + 1e-3) + 1e-12;
    let conflicting_cost = conflicting.cost_error() <= 1e-3;
    let sound = |o: &SubproblemOutcome| o.descended && o.feasible;
    outcome(
        within_cell(&reachable)
            && within_cell(&conflicting)
            && reachable_cost
            && conflicting_cost
            && sound(&reachable)
            && sound(&conflicting),
        format!(
            "far only: |ΔA| = {:.2} cells, J = {:.1e} vs grid {:.1e}; near+far: |ΔA| = {:.2} cells, \
             cost error {:.1e} (limits 1 cell, 1e-3)",
            reachable.aperture_error() / reachable.cell,
            reachable.terminal_cost,
            reachable.grid_cost,
            conflicting.aperture_error() / conflicting.cell,
            conflicting.cost_error()
        ),
    )
}

fn closed_loop_tracking() -> Outcome {
    let s = load("static_target.json");
    let trace = run(&s).unwrap();
    let directive = &s.sequences[0].directive;
    let goals = &directive.targets[0];
    let image_goal = &goals.image[0];
    let offset = s.targets[0]
        .feature_offset(image_goal.feature.as_deref().unwrap())
        .unwrap();
    let target_rotation = s.targets[0].pose.rotation;
    let (mut depth, mut pixel, mut far, mut chord) = (0.0_f64, 0.0_f64, 0.0_f64, 0.0_f64);
    for r in trace.records.iter().filter(|r| r.time >= 10.0) {
        let pose = r.drone.pose();
        let p = r.targets[0].true_position;
        let d = relative_position(&pose, &p).z;
        depth = depth.max((d - goals.depth.unwrap().desired).abs());
        let im = project(
            &relative_position(&pose, &(p + Vector3::new(0.0, 0.0, offset))),
            r.camera.focal_length,
            &s.lens,
        )
        .unwrap();
        pixel = pixel
            .max((im.u - image_goal.point.u).abs())
            .max((im.v - image_goal.point.v).abs());
        // the far limit is anchored to the target's depth
        far = far.max((r.dof.far.value() - d).abs() / d);
        let rel = relative_rotation(&pose, &Pose::new(p, target_rotation));
        chord = chord.max(rotation_distance(&rel, &goals.rotation.unwrap().desired));
    }
    outcome(
        depth < 0.1 && pixel < 5.0 && far < 0.05 && chord < 0.05,
        format!(
            "t ∈ [10, {}] s: max |d − d*| = {depth:.4} m (< 0.1), image error {pixel:.3} px (< 5), \
             |D_f − D_f*| = {:.3}% (< 5%), chordal error {chord:.2e} (< 0.05)",
            s.duration,
            far * 100.0
        ),
    )
}

fn park_shape() -> Outcome {
    let s = load("park.json");
    let trace = run(&s).unwrap();
    let r = &trace.records;
    let switches: Vec<usize> = (1..r.len()).filter(|&i| r[i].sequence != r[i - 1].sequence).collect();
    let mut ok = switches.len() == 3;
    let mut notes = Vec::new();
    for (k, &i) in switches.iter().enumerate() {
        let end = switches.get(k + 1).copied().unwrap_or(r.len());
        let spike = r[i].cost.total > r[i - 1].cost.total;
        let (peak_at, peak) = (i..end)
            .map(|j| (j, r[j].cost.total))
            .fold((i, f64::NEG_INFINITY), |a, b| if b.1 > a.1 { b } else { a });
        let low = r[peak_at..end]
            .iter()
            .map(|x| x.cost.total)
            .fold(f64::INFINITY, f64::min);
        let decays = low < 0.1 * peak;
        ok &= spike && decays;
        notes.push(format!(
            "t = {:.0} s: {:.2e} → {:.2e}, peak {:.2e}, low {:.2e} ({:.1}%)",
            r[i].time,
            r[i - 1].cost.total,
            r[i].cost.total,
            peak,
            low,
            100.0 * low / peak
        ));
    }
    // converged aperture: mean over the last 5 s of a sequence
    let settled = |seq: usize| {
        let end = s.sequences.get(seq + 1).map_or(s.duration, |q| q.start);
        let a: Vec<f64> = r
            .iter()
            .filter(|x| x.sequence == seq && x.time >= end - 5.0)
            .map(|x| x.camera.aperture)
            .collect();
        a.iter().sum::<f64>() / a.len() as f64
    };
    let (a1, a2) = (settled(0), settled(1));
    ok &= a2 > a1;
    outcome(
        ok,
        format!(
            "{}; settled aperture seq 1 = {a1:.2}, seq 2 = {a2:.2}",
            notes.join("; ")
        ),
    )
}

fn width_monotonicity() -> Outcome {
    let mut rng = rng(7);
    let (mut points, mut violations) = (0, 0);
    for _ in 0..1_000 {
        let lens = random_lens(&mut rng);
        let intr = random_intrinsics(&mut rng);
        let Ok(far) = far_partials(&intr, &lens) else {
            continue;
        };
        let near = near_partials(&intr, &lens).unwrap();
        points += 1;
        // analytic slope and a forward difference must both be positive
        let da = 1e-6 * intr.aperture;
        let wider = CameraIntrinsics {
            aperture: intr.aperture + da,
            ..intr
        };
        let w0 = dof_interval(&intr, &lens).unwrap();
        let w1 = dof_interval(&wider, &lens).unwrap();
        let fd_ok = w1.far.is_unbounded() || w1.width() > w0.width();
        if !(far[2] - near[2] > 0.0 && fd_ok) {
            violations += 1;
        }
    }
    outcome(
        violations == 0 && points > 0,
        format!("{points} bounded points of 1000 random lenses, {violations} with ∂(D_f − D_n)/∂A ≤ 0"),
    )
}

fn csv_bytes(trace: &Trace) -> Vec<u8> {
    let mut out = Vec::new();
    write_trace(trace, &mut out).unwrap();
    out
}

fn determinism() -> Outcome {
    let s = load("park.json");
    let a = csv_bytes(&run(&s).unwrap());
    let b = csv_bytes(&run(&s).unwrap());
    outcome(
        a == b,
        format!(
            "two park runs with seed {}: {} bytes each, identical: {}",
            s.seed,
            a.len(),
            a == b
        ),
    )
}

type Criterion = (&'static str, Duration, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 8] = [
        ("optics oracle equivalence", Duration::from_secs(5), optics_equivalence),
        ("hyperfocal identity", Duration::from_secs(1), hyperfocal_identity),
        ("gradient checks", Duration::from_secs(30), gradient_checks),
        ("solver vs grid oracle", Duration::from_secs(30), solver_vs_grid),
        ("closed-loop tracking", Duration::from_secs(120), closed_loop_tracking),
        ("four-sequence park scenario", Duration::from_secs(300), park_shape),
        (
            "DoF width monotonic in aperture",
            Duration::from_secs(1),
            width_monotonicity,
        ),
        ("determinism", Duration::from_secs(600), determinism),
    ];
    let mut failed = 0;
    for (n, (name, limit, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let o = check();
        let elapsed = start.elapsed();
        let in_time = elapsed <= *limit;
        let passed = o.passed && in_time;
        if !passed {
            failed += 1;
        }
        println!(
            "{} criterion {}: {name}: {} [{:.2} s of {} s{}]",
            if passed { "PASS" } else { "FAIL" },
            n + 1,
            o.detail,
            elapsed.as_secs_f64(),
            limit.as_secs(),
            if in_time { "" } else { ", too slow" }
        );
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
