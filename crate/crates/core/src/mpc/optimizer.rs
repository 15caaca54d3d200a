//! Box-constrained minimization by projected limited-memory quasi-Newton
//! steps with a backtracking (Armijo) line search along the projection arc.
//!
//! Variables sitting on a bound with the gradient pushing outward are frozen
//! for the direction computation; the two-loop recursion runs on the rest.
//! Every trial point is projected onto the box, so iterates are feasible
//! to the bit.

use std::collections::VecDeque;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimizerOptions {
    pub max_iterations: usize,
    /// Stop when the projected gradient's max-norm drops below this.
    pub gradient_tolerance: f64,
    pub memory: usize,
    pub armijo: f64,
    pub backtrack: f64,
    pub max_backtracks: usize,
}

impl Default for OptimizerOptions {
    fn default() -> Self {
        Self {
            max_iterations: 150,
            gradient_tolerance: 1e-6,
            memory: 8,
            armijo: 1e-4,
            backtrack: 0.5,
            max_backtracks: 40,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    GradientTolerance,
    IterationLimit,
    /// No feasible step decreased the objective.
    Stalled,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub gradient: Vec<f64>,
    pub iterations: usize,
    pub evaluations: usize,
    pub termination: Termination,
}

impl Minimum {
    pub fn converged(&self) -> bool {
        self.termination == Termination::GradientTolerance
    }
}

pub fn project(x: &mut [f64], lower: &[f64], upper: &[f64]) {
    for ((xi, &lo), &hi) in x.iter_mut().zip(lower).zip(upper) {
        *xi = xi.max(lo).min(hi);
    }
}

/// `P(x - g) - x`, the first-order stationarity measure on a box.
pub fn projected_gradient(x: &[f64], g: &[f64], lower: &[f64], upper: &[f64]) -> Vec<f64> {
    x.iter()
        .zip(g)
        .zip(lower.iter().zip(upper))
        .map(|((&xi, &gi), (&lo, &hi))| (xi - gi).max(lo).min(hi) - xi)
        .collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn inf_norm(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, x| m.max(x.abs()))
}

struct History {
    pairs: VecDeque<(Vec<f64>, Vec<f64>, f64)>,
    capacity: usize,
}

impl History {
    fn push(&mut self, s: Vec<f64>, y: Vec<f64>) {
        let sy = dot(&s, &y);
        if !(sy > 1e-12 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt()) {
            return;
        }
        if self.pairs.len() == self.capacity {
            self.pairs.pop_front();
        }
        self.pairs.push_back((s, y, 1.0 / sy));
    }

    /// `-H g` restricted to the `free` coordinates.
    fn direction(&self, g: &[f64], free: &[bool]) -> Vec<f64> {
        let mask = |v: &[f64]| -> Vec<f64> { v.iter().zip(free).map(|(x, &f)| if f { *x } else { 0.0 }).collect() };
        let mut q = mask(g);
        let mut alpha = Vec::with_capacity(self.pairs.len());
        for (s, y, rho) in self.pairs.iter().rev() {
            let s = mask(s);
            let a = rho * dot(&s, &q);
            for ((qi, yi), &f) in q.iter_mut().zip(y).zip(free) {
                if f {
                    *qi -= a * yi;
                }
            }
            alpha.push(a);
        }
        let gamma = match self.pairs.back() {
            Some((s, y, _)) => {
                let y = mask(y);
                dot(&mask(s), &y) / dot(&y, &y)
            }
            None => 1.0 / inf_norm(&q).max(1.0),
        };
        for qi in q.iter_mut() {
            *qi *= gamma;
        }
        for ((s, y, rho), a) in self.pairs.iter().zip(alpha.iter().rev()) {
            let b = rho * dot(&mask(y), &q);
            for ((qi, si), &f) in q.iter_mut().zip(s).zip(free) {
                if f {
                    *qi += si * (a - b);
                }
            }
        }
        q.iter().map(|x| -x).collect()
    }
}

/// Minimizes `objective` over the box `[lower, upper]` starting from the
/// projection of `x0`. The objective returns `(value, gradient)`; a
/// non-finite value marks a point the line search must back away from.
pub fn minimize<E>(
    mut objective: impl FnMut(&[f64]) -> Result<(f64, Vec<f64>), E>,
    x0: &[f64],
    lower: &[f64],
    upper: &[f64],
    opts: &OptimizerOptions,
) -> Result<Minimum, E> {
    let n = x0.len();
    // variables pinned by a degenerate box never move; dropping their
    // gradient keeps them out of the curvature pairs
    let pinned: Vec<bool> = lower.iter().zip(upper).map(|(lo, hi)| lo >= hi).collect();
    let mut objective = move |x: &[f64]| {
        objective(x).map(|(f, mut g)| {
            for (gi, &p) in g.iter_mut().zip(&pinned) {
                if p {
                    *gi = 0.0;
                }
            }
            (f, g)
        })
    };
    let mut x = x0.to_vec();
    project(&mut x, lower, upper);
    let (mut f, mut g) = objective(&x)?;
    let mut evaluations = 1;
    let mut history = History {
        pairs: VecDeque::with_capacity(opts.memory),
        capacity: opts.memory.max(1),
    };
    let mut iterations = 0;
    let termination = loop {
        let pg = projected_gradient(&x, &g, lower, upper);
        if inf_norm(&pg) < opts.gradient_tolerance {
            break Termination::GradientTolerance;
        }
        if iterations >= opts.max_iterations {
            break Termination::IterationLimit;
        }
        iterations += 1;

        let free: Vec<bool> = (0..n)
            .map(|i| !((x[i] <= lower[i] && g[i] > 0.0) || (x[i] >= upper[i] && g[i] < 0.0)))
            .collect();
        let mut accepted = None;
        for attempt in 0..2 {
            let d = if attempt == 0 && !history.pairs.is_empty() {
                let d = history.direction(&g, &free);
                if dot(&d, &g) < 0.0 {
                    d
                } else {
                    continue;
                }
            } else {
                let scale = 1.0 / inf_norm(&pg).max(1.0);
                (0..n).map(|i| if free[i] { -g[i] * scale } else { 0.0 }).collect()
            };
            let mut step = 1.0;
            for _ in 0..opts.max_backtracks {
                let mut trial: Vec<f64> = x.iter().zip(&d).map(|(xi, di)| xi + step * di).collect();
                project(&mut trial, lower, upper);
                if trial == x {
                    break;
                }
                let predicted: f64 = g
                    .iter()
                    .zip(trial.iter().zip(&x))
                    .map(|(gi, (t, xi))| gi * (t - xi))
                    .sum();
                let (ft, gt) = objective(&trial)?;
                evaluations += 1;
                if ft.is_finite() && ft <= f + opts.armijo * predicted && predicted < 0.0 {
                    accepted = Some((trial, ft, gt));
                    break;
                }
                step *= opts.backtrack;
            }
            if accepted.is_some() {
                break;
            }
            history.pairs.clear();
        }
        let Some((xn, fnew, gn)) = accepted else {
            break Termination::Stalled;
        };
        let s: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = gn.iter().zip(&g).map(|(a, b)| a - b).collect();
        history.push(s, y);
        x = xn;
        f = fnew;
        g = gn;
    };
    Ok(Minimum {
        x,
        value: f,
        gradient: g,
        iterations,
        evaluations,
        termination,
    })
}
