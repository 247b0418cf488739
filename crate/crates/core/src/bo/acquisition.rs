use std::cmp::Ordering;

use rand::Rng;
use statrs::function::erf::erfc;

use crate::mtgp::{MtgpModel, SearchPoint, BOX_LOWER, BOX_UPPER};
use crate::rng::{rng_from, stream};

const SIGMA_FLOOR: f64 = 1e-12;

/// Anything that yields a posterior (mean, variance) per task.
pub trait Posterior {
    fn posterior(&self, x: &SearchPoint, task: usize) -> (f64, f64);

    /// Whether `task` was already evaluated at `x`; such points are skipped.
    fn observed(&self, _x: &SearchPoint, _task: usize) -> bool {
        false
    }
}

impl Posterior for MtgpModel {
    fn posterior(&self, x: &SearchPoint, task: usize) -> (f64, f64) {
        self.predict(x, task)
    }

    fn observed(&self, x: &SearchPoint, task: usize) -> bool {
        self.train().contains(x, task)
    }
}

#[inline]
fn std_normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

#[inline]
fn std_normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// Expected improvement below `y_best` of a Gaussian with the given moments.
pub fn ei_from_moments(mean: f64, var: f64, y_best: f64) -> f64 {
    let sigma = var.max(0.0).sqrt();
    if sigma < SIGMA_FLOOR {
        return (y_best - mean).max(0.0);
    }
    let eta = (y_best - mean) / sigma;
    (sigma * (eta * std_normal_cdf(eta) + std_normal_pdf(eta))).max(0.0)
}

pub fn expected_improvement<P: Posterior + ?Sized>(model: &P, x: &SearchPoint, task: usize, y_best: f64) -> f64 {
    let (m, v) = model.posterior(x, task);
    ei_from_moments(m, v, y_best)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AcquisitionBudget {
    pub candidates: usize,
    pub refine_starts: usize,
    pub refine_evals: usize,
}

impl Default for AcquisitionBudget {
    fn default() -> Self {
        Self { candidates: 1024, refine_starts: 8, refine_evals: 64 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Acquisition {
    pub point: SearchPoint,
    pub ei: f64,
    pub mean: f64,
}

/// Better = higher EI, then lower posterior mean, then lexicographically
/// smaller coordinates.
fn rank(a: &Acquisition, b: &Acquisition) -> Ordering {
    b.ei.total_cmp(&a.ei)
        .then(a.mean.total_cmp(&b.mean))
        .then(a.point.coords[0].total_cmp(&b.point.coords[0]))
        .then(a.point.coords[1].total_cmp(&b.point.coords[1]))
}

fn radical_inverse(mut i: u64, base: u64) -> f64 {
    let (mut f, mut r) = (1.0, 0.0);
    while i > 0 {
        f /= base as f64;
        r += f * (i % base) as f64;
        i /= base;
    }
    r
}

/// Halton points in the box with a seeded toroidal shift.
pub fn candidate_points(n: usize, seed: u64, parts: &[u64]) -> Vec<SearchPoint> {
    let mut tags = vec![stream::CANDIDATES];
    tags.extend_from_slice(parts);
    let mut rng = rng_from(seed, &tags);
    let shift: [f64; 2] = [rng.gen(), rng.gen()];
    let width = BOX_UPPER - BOX_LOWER;
    (1..=n as u64)
        .map(|i| {
            let u = (radical_inverse(i, 2) + shift[0]).fract();
            let v = (radical_inverse(i, 3) + shift[1]).fract();
            SearchPoint::clamped(BOX_LOWER + width * u, BOX_LOWER + width * v)
        })
        .collect()
}

fn evaluate<P: Posterior + ?Sized>(model: &P, x: SearchPoint, task: usize, y_best: f64) -> Acquisition {
    let (mean, var) = model.posterior(&x, task);
    Acquisition { point: x, ei: ei_from_moments(mean, var, y_best), mean }
}

/// Compass search: moves only on strict EI improvement; the step halves
/// after a full unsuccessful sweep.
fn refine<P: Posterior + ?Sized>(model: &P, start: Acquisition, task: usize, y_best: f64, evals: usize) -> Acquisition {
    let mut best = start;
    let mut step = 0.25;
    let mut used = 0;
    const DIRS: [[f64; 2]; 4] = [[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]];
    while used < evals && step > 1e-6 {
        let mut moved = false;
        for d in DIRS {
            if used >= evals {
                break;
            }
            let x = SearchPoint::clamped(best.point.coords[0] + step * d[0], best.point.coords[1] + step * d[1]);
            used += 1;
            if x.coords == best.point.coords || model.observed(&x, task) {
                continue;
            }
            let cand = evaluate(model, x, task, y_best);
            if cand.ei > best.ei {
                best = cand;
                moved = true;
            }
        }
        if !moved {
            step *= 0.5;
        }
    }
    best
}

/// Maximizes EI for a fixed task: a seeded quasi-random candidate sweep,
/// then compass refinement from the best few. Points already observed for
/// `task` are never returned (unless every candidate is observed).
pub fn maximize_ei<P: Posterior + Sync + ?Sized>(
    model: &P,
    task: usize,
    y_best: f64,
    budget: &AcquisitionBudget,
    seed: u64,
    parts: &[u64],
) -> Acquisition {
    let mut scored: Vec<Acquisition> = candidate_points(budget.candidates, seed, parts)
        .into_iter()
        .filter(|x| !model.observed(x, task))
        .map(|x| evaluate(model, x, task, y_best))
        .collect();
    if scored.is_empty() {
        // degenerate: the whole candidate set was observed; fall back to the centre
        return evaluate(model, SearchPoint::origin(), task, y_best);
    }
    scored.sort_by(rank);
    let mut pool: Vec<Acquisition> = scored
        .iter()
        .take(budget.refine_starts)
        .map(|s| refine(model, *s, task, y_best, budget.refine_evals))
        .collect();
    pool.push(scored[0]);
    pool.sort_by(rank);
    pool[0]
}
