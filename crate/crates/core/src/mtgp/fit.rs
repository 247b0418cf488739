use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use super::likelihood::{lml_core, Entries};
use super::{GpError, InferenceMode, MtgpHyperparams, MtgpModel, ObservationSet, BOX_LOWER, BOX_UPPER};
use crate::optim::{minimize, BfgsOptions, Bounds, Minimum};
use crate::rng::{rng_from, stream};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FitOptions {
    pub restarts: usize,
    pub seed: u64,
    pub mode: InferenceMode,
    pub max_iter: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self { restarts: 5, seed: 0, mode: InferenceMode::Exact, max_iter: 200 }
    }
}

const MU_BOUND: f64 = 1e4;
const OFFDIAG_BOUND: f64 = 1e3;

/// Box for the flat parameter vector of [`MtgpHyperparams::to_vec`].
pub fn param_bounds(m: usize) -> Bounds {
    let mut lower = vec![-MU_BOUND; m];
    let mut upper = vec![MU_BOUND; m];
    for i in 0..m {
        for j in 0..=i {
            if i == j {
                lower.push(1e-4f64.ln());
                upper.push(1e3f64.ln());
            } else {
                lower.push(-OFFDIAG_BOUND);
                upper.push(OFFDIAG_BOUND);
            }
        }
    }
    lower.push(0.05f64.ln());
    upper.push(20f64.ln());
    lower.extend(std::iter::repeat(1e-6f64.ln()).take(m));
    upper.extend(std::iter::repeat(1e3f64.ln()).take(m));
    Bounds { lower, upper }
}

fn sample_sd(v: &[f64]) -> Option<f64> {
    if v.len() < 2 {
        return None;
    }
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (v.len() - 1) as f64;
    let sd = var.sqrt();
    (sd.is_finite() && sd > 1e-6).then_some(sd)
}

/// Per-task (mean, sd) with pooled fallbacks for tasks with too little data.
fn task_stats(train: &ObservationSet) -> Vec<(f64, f64)> {
    let all: Vec<f64> = train.observations().iter().map(|o| o.y).collect();
    let pooled_mean = all.iter().sum::<f64>() / all.len().max(1) as f64;
    let pooled_sd = sample_sd(&all).unwrap_or(1.0);
    (0..train.num_tasks())
        .map(|t| {
            let v = train.task_values(t);
            let mean = if v.is_empty() { pooled_mean } else { v.iter().sum::<f64>() / v.len() as f64 };
            (mean, sample_sd(&v).unwrap_or(pooled_sd))
        })
        .collect()
}

/// Deterministic first initialization: task sample means, `L = diag(sd)`,
/// length-scale half the box diagonal, noise 10% of each task's sd.
pub fn initial_guess(train: &ObservationSet) -> MtgpHyperparams {
    let stats = task_stats(train);
    let m = stats.len();
    let half_diag = (BOX_UPPER - BOX_LOWER) * 2f64.sqrt() / 2.0;
    MtgpHyperparams {
        mu: stats.iter().map(|s| s.0).collect(),
        lt: (0..m).map(|i| (0..m).map(|j| if i == j { stats[i].1 } else { 0.0 }).collect()).collect(),
        log_length_scale: half_diag.ln(),
        log_noise: stats.iter().map(|s| (0.1 * s.1).ln()).collect(),
    }
}

fn random_guess(train: &ObservationSet, rng: &mut impl Rng) -> MtgpHyperparams {
    let stats = task_stats(train);
    let m = stats.len();
    let mut p = initial_guess(train);
    for i in 0..m {
        let (mean, sd) = stats[i];
        let z: f64 = rng.sample(StandardNormal);
        p.mu[i] = mean + 0.25 * sd * z;
        for j in 0..i {
            p.lt[i][j] = sd * rng.gen_range(-0.7..0.7);
        }
        p.lt[i][i] = sd * rng.gen_range(-1.0f64..1.0).exp();
        p.log_noise[i] = (sd * rng.gen_range(0.01f64.ln()..0.5f64.ln()).exp()).ln();
    }
    p.log_length_scale = rng.gen_range(0.3f64.ln()..6f64.ln());
    p
}

fn run_restart(e: &Entries, m: usize, x0: &[f64], bounds: &Bounds, max_iter: usize) -> Option<Minimum> {
    let opts = BfgsOptions { max_iter, ..BfgsOptions::default() };
    minimize(
        |x| {
            let p = MtgpHyperparams::from_vec(m, x);
            let (l, g) = lml_core(e, &p, true).ok()?;
            Some((-l, g?.into_iter().map(|v| -v).collect()))
        },
        x0,
        bounds,
        opts,
    )
}

/// Maximum-likelihood fit. Hyperparameters are estimated on the real
/// observations; the posterior then follows `opts.mode`. Restarts run in
/// parallel and the best optimum wins (ties go to the lower restart index).
pub fn fit(train: &ObservationSet, opts: &FitOptions) -> Result<MtgpModel, GpError> {
    fit_from(train, opts, None)
}

/// As [`fit`], with an extra starting point (e.g. the previous fit's optimum)
/// tried before the random restarts.
pub fn fit_from(
    train: &ObservationSet,
    opts: &FitOptions,
    warm: Option<&MtgpHyperparams>,
) -> Result<MtgpModel, GpError> {
    if train.is_empty() {
        return Err(GpError::Empty);
    }
    let m = train.num_tasks();
    let bounds = param_bounds(m);
    let entries = Entries::exact(train);
    let restarts = opts.restarts.max(1);

    let mut starts: Vec<Vec<f64>> = vec![initial_guess(train).to_vec()];
    if let Some(w) = warm {
        w.check(m)?;
        starts.push(w.to_vec());
    }
    for r in 1..restarts {
        let mut rng = rng_from(opts.seed, &[stream::RESTARTS, r as u64]);
        starts.push(random_guess(train, &mut rng).to_vec());
    }
    for s in &mut starts {
        bounds.project(s);
    }

    let results: Vec<Option<Minimum>> =
        starts.par_iter().map(|x0| run_restart(&entries, m, x0, &bounds, opts.max_iter)).collect();
    let mut ranked: Vec<(usize, Minimum)> =
        results.into_iter().enumerate().filter_map(|(i, r)| r.map(|r| (i, r))).collect();
    ranked.sort_by(|a, b| a.1.f.total_cmp(&b.1.f).then(a.0.cmp(&b.0)));
    for (_, best) in ranked {
        let params = MtgpHyperparams::from_vec(m, &best.x);
        if let Ok(model) = MtgpModel::new(train.clone(), params, opts.mode) {
            return Ok(model);
        }
    }
    Err(GpError::FitFailure { restarts: starts.len() })
}
