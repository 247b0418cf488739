use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::landscape::grid_point;
use super::HarnessError;
use crate::bo::{Objective, ObjectiveValue};
use crate::mtgp::SearchPoint;
use crate::rng::{rng_from, stream};

/// Resolution of the grid used to locate each task's optimum.
pub const ORACLE_SIDE: usize = 1001;

const WELLS: [([f64; 2], f64, f64); 2] = [([1.2, -0.6], 0.30, 0.8), ([-1.4, 1.5], 0.22, 0.7)];
const BASELINE: f64 = 0.45;
const MAX_SHIFT: f64 = 3.0;
const MAX_BUMP: f64 = 0.08;

/// Smooth two-well base surface with values in roughly `[0.15, 0.45]`.
pub fn base_surface(x: [f64; 2]) -> f64 {
    BASELINE
        - WELLS
            .iter()
            .map(|(c, depth, w)| depth * (-((x[0] - c[0]).powi(2) + (x[1] - c[1]).powi(2)) / (2.0 * w * w)).exp())
            .sum::<f64>()
}

fn bump(x: [f64; 2], phase: [f64; 2]) -> f64 {
    (1.3 * x[0] + phase[0]).sin() * (1.1 * x[1] + phase[1]).cos()
}

/// `f(x) = g(x + shift) + scale · h(x)` with a grid-located optimum.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticTask {
    pub shift: [f64; 2],
    pub scale: f64,
    pub phase: [f64; 2],
    pub optimum: SearchPoint,
    pub optimum_value: f64,
}

impl SyntheticTask {
    pub fn value(&self, x: &SearchPoint) -> f64 {
        let c = x.coords;
        base_surface([c[0] + self.shift[0], c[1] + self.shift[1]]) + self.scale * bump(c, self.phase)
    }

    fn locate_optimum(&mut self) {
        let (row, v) = (0..ORACLE_SIDE * ORACLE_SIDE)
            .into_par_iter()
            .map(|r| (r, self.value(&grid_point(r, ORACLE_SIDE))))
            .reduce(|| (usize::MAX, f64::INFINITY), |a, b| if b.1 < a.1 || (b.1 == a.1 && b.0 < a.0) { b } else { a });
        self.optimum = grid_point(row, ORACLE_SIDE);
        self.optimum_value = v;
    }
}

impl Objective for SyntheticTask {
    fn evaluate(&self, x: &SearchPoint) -> ObjectiveValue {
        ObjectiveValue::new(self.value(x))
    }
}

/// `m` related tasks: shift magnitude and bump scale shrink linearly to zero
/// as `correlation → 1`, where all tasks coincide.
pub fn synthetic_tasks(m: usize, correlation: f64, seed: u64) -> Result<Vec<SyntheticTask>, HarnessError> {
    if m == 0 || !(0.0..=1.0).contains(&correlation) {
        return Err(HarnessError::InvalidSpec(format!("need m ≥ 1 and correlation in [0, 1], got {m}, {correlation}")));
    }
    let spread = 1.0 - correlation;
    let mut rng = rng_from(seed, &[stream::SYNTHETIC]);
    let phase = [rng.gen_range(0.0..std::f64::consts::TAU), rng.gen_range(0.0..std::f64::consts::TAU)];
    Ok((0..m)
        .map(|_| {
            let angle = rng.gen_range(0.0..std::f64::consts::TAU);
            let radius = spread * MAX_SHIFT * rng.gen_range(0.5..1.0);
            let mut task = SyntheticTask {
                shift: [radius * angle.cos(), radius * angle.sin()],
                scale: spread * MAX_BUMP * rng.gen_range(0.5..1.5),
                phase,
                optimum: SearchPoint::origin(),
                optimum_value: f64::NAN,
            };
            task.locate_optimum();
            task
        })
        .collect())
}
