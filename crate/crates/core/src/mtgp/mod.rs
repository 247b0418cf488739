//! Coregionalized Gaussian process over the log10 (C, gamma) box.
//!
//! The joint kernel is `K^t[i][l] · k_x(x, x′)` with a Matérn 5/2 input
//! kernel (unit signal variance) and a task covariance `K^t = L Lᵀ`. Each task
//! has its own prior mean and Gaussian noise. Tasks are zero-based.

mod fit;
mod likelihood;
mod model;

pub use fit::{fit, fit_from, initial_guess, param_bounds, FitOptions};
pub use likelihood::{
    base_jitter, entrywise_covariance, joint_covariance, kronecker_covariance, lml_with_gradient,
    log_marginal_likelihood, JITTER_ESCALATIONS, JITTER_SCALE,
};
pub use model::{impute_missing, MtgpModel};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::svm::{SvmError, SvmHyperparams};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GpError {
    #[error("covariance not positive definite (last jitter {jitter:.3e})")]
    FactorizationFailure { jitter: f64 },
    #[error("all {restarts} likelihood restarts failed")]
    FitFailure { restarts: usize },
    #[error("point ({0}, {1}) outside the [-3, 3]² box")]
    OutOfBox(f64, f64),
    #[error("task {task} outside 0..{num_tasks}")]
    TaskOutOfRange { task: usize, num_tasks: usize },
    #[error("duplicate observation for task {task} at ({x}, {y})")]
    Duplicate { task: usize, x: f64, y: f64 },
    #[error("non-finite response {0}")]
    NonFinite(f64),
    #[error("observation set is not a block design")]
    NotBlockDesign,
    #[error("hyperparameters do not match {0} tasks")]
    ShapeMismatch(usize),
    #[error("no observations")]
    Empty,
    #[error("model serialization: {0}")]
    Serde(String),
}

pub const BOX_LOWER: f64 = -3.0;
pub const BOX_UPPER: f64 = 3.0;

/// `(log10 C, log10 gamma)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchPoint {
    pub coords: [f64; 2],
}

impl SearchPoint {
    pub fn new(log_c: f64, log_gamma: f64) -> Result<Self, GpError> {
        let inside = |v: f64| (BOX_LOWER..=BOX_UPPER).contains(&v);
        if !(inside(log_c) && inside(log_gamma)) {
            return Err(GpError::OutOfBox(log_c, log_gamma));
        }
        Ok(Self { coords: [log_c, log_gamma] })
    }

    pub fn origin() -> Self {
        Self { coords: [0.0, 0.0] }
    }

    pub fn clamped(log_c: f64, log_gamma: f64) -> Self {
        Self { coords: [log_c.clamp(BOX_LOWER, BOX_UPPER), log_gamma.clamp(BOX_LOWER, BOX_UPPER)] }
    }

    pub fn c(&self) -> f64 {
        10f64.powf(self.coords[0])
    }

    pub fn gamma(&self) -> f64 {
        10f64.powf(self.coords[1])
    }

    pub fn hyperparams(&self) -> Result<SvmHyperparams, SvmError> {
        SvmHyperparams::new(self.c(), self.gamma())
    }

    pub fn distance(&self, other: &SearchPoint) -> f64 {
        let dx = self.coords[0] - other.coords[0];
        let dy = self.coords[1] - other.coords[1];
        (dx * dx + dy * dy).sqrt()
    }

    fn key(&self) -> [u64; 2] {
        [self.coords[0].to_bits(), self.coords[1].to_bits()]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub point: SearchPoint,
    pub task: usize,
    pub y: f64,
    #[serde(default)]
    pub imputed: bool,
}

impl Observation {
    pub fn new(point: SearchPoint, task: usize, y: f64) -> Self {
        Self { point, task, y, imputed: false }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Design {
    /// Every task observed exactly once at every distinct point.
    Block,
    Irregular,
}

/// How the posterior treats points that were not observed for every task.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InferenceMode {
    /// Condition only on real observations (entrywise covariance).
    #[default]
    Exact,
    /// Complete the block design, filling gaps with the task's prior mean.
    Impute,
}

/// Ordered observations for `num_tasks` tasks with no repeated (point, task).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObservationSet {
    num_tasks: usize,
    observations: Vec<Observation>,
}

impl ObservationSet {
    pub fn new(num_tasks: usize) -> Self {
        assert!(num_tasks >= 1);
        Self { num_tasks, observations: Vec::new() }
    }

    pub fn from_observations(num_tasks: usize, obs: impl IntoIterator<Item = Observation>) -> Result<Self, GpError> {
        let mut set = Self::new(num_tasks);
        for o in obs {
            set.push(o)?;
        }
        Ok(set)
    }

    pub fn push(&mut self, obs: Observation) -> Result<(), GpError> {
        if obs.task >= self.num_tasks {
            return Err(GpError::TaskOutOfRange { task: obs.task, num_tasks: self.num_tasks });
        }
        if !obs.y.is_finite() {
            return Err(GpError::NonFinite(obs.y));
        }
        SearchPoint::new(obs.point.coords[0], obs.point.coords[1])?;
        if self.contains(&obs.point, obs.task) {
            return Err(GpError::Duplicate { task: obs.task, x: obs.point.coords[0], y: obs.point.coords[1] });
        }
        self.observations.push(obs);
        Ok(())
    }

    pub fn contains(&self, point: &SearchPoint, task: usize) -> bool {
        self.observations.iter().any(|o| o.task == task && o.point.key() == point.key())
    }

    pub fn num_tasks(&self) -> usize {
        self.num_tasks
    }

    pub fn observations(&self) -> &[Observation] {
        &self.observations
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    /// Distinct points in order of first appearance, and each observation's
    /// index into that list.
    pub fn distinct_points(&self) -> (Vec<SearchPoint>, Vec<usize>) {
        let mut points: Vec<SearchPoint> = Vec::new();
        let mut index = Vec::with_capacity(self.len());
        for o in &self.observations {
            let k = match points.iter().position(|p| p.key() == o.point.key()) {
                Some(k) => k,
                None => {
                    points.push(o.point);
                    points.len() - 1
                }
            };
            index.push(k);
        }
        (points, index)
    }

    pub fn design(&self) -> Design {
        let (points, _) = self.distinct_points();
        // duplicates are rejected on push, so a full count means a full grid
        if !self.is_empty() && points.len() * self.num_tasks == self.len() {
            Design::Block
        } else {
            Design::Irregular
        }
    }

    pub fn task_values(&self, task: usize) -> Vec<f64> {
        self.observations.iter().filter(|o| o.task == task).map(|o| o.y).collect()
    }
}

/// Matérn 5/2 correlation at distance `r`.
#[inline]
pub fn matern52_r(r: f64, length_scale: f64) -> f64 {
    let s = 5f64.sqrt() * r / length_scale;
    (1.0 + s + s * s / 3.0) * (-s).exp()
}

pub fn matern52(a: &SearchPoint, b: &SearchPoint, length_scale: f64) -> f64 {
    matern52_r(a.distance(b), length_scale)
}

/// `K^t[i][l] · k_x(a, b)`.
pub fn cross_task_kernel(a: &SearchPoint, i: usize, b: &SearchPoint, l: usize, params: &MtgpHyperparams) -> f64 {
    params.task_covariance()[i][l] * matern52(a, b, params.length_scale())
}

/// Hyperparameters. `lt` is the lower-triangular factor of `K^t` (entries
/// above the diagonal are ignored); `log_noise[i]` is `ln σ_i`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MtgpHyperparams {
    pub mu: Vec<f64>,
    pub lt: Vec<Vec<f64>>,
    pub log_length_scale: f64,
    pub log_noise: Vec<f64>,
}

impl MtgpHyperparams {
    /// Independent tasks with the given prior scale and noise level.
    pub fn isotropic(num_tasks: usize, mean: f64, sd: f64, length_scale: f64, noise_sd: f64) -> Self {
        Self {
            mu: vec![mean; num_tasks],
            lt: (0..num_tasks).map(|i| (0..num_tasks).map(|j| if i == j { sd } else { 0.0 }).collect()).collect(),
            log_length_scale: length_scale.ln(),
            log_noise: vec![noise_sd.ln(); num_tasks],
        }
    }

    pub fn num_tasks(&self) -> usize {
        self.mu.len()
    }

    pub fn num_params(num_tasks: usize) -> usize {
        2 * num_tasks + num_tasks * (num_tasks + 1) / 2 + 1
    }

    pub fn length_scale(&self) -> f64 {
        self.log_length_scale.exp()
    }

    pub fn noise_var(&self, task: usize) -> f64 {
        (2.0 * self.log_noise[task]).exp()
    }

    /// `K^t = L Lᵀ`.
    pub fn task_covariance(&self) -> Vec<Vec<f64>> {
        let m = self.num_tasks();
        let mut k = vec![vec![0.0; m]; m];
        for i in 0..m {
            for j in 0..m {
                let upto = i.min(j);
                k[i][j] = (0..=upto).map(|q| self.lt[i][q] * self.lt[j][q]).sum();
            }
        }
        k
    }

    pub fn check(&self, num_tasks: usize) -> Result<(), GpError> {
        let m = self.num_tasks();
        let ok = m == num_tasks
            && self.log_noise.len() == m
            && self.lt.len() == m
            && self.lt.iter().all(|r| r.len() == m)
            && (0..m).all(|i| self.lt[i][i] > 0.0);
        if ok {
            Ok(())
        } else {
            Err(GpError::ShapeMismatch(num_tasks))
        }
    }

    /// Flat vector `[μ, L (packed rows, log diagonal), ln σ_l, ln σ_i]`.
    pub fn to_vec(&self) -> Vec<f64> {
        let m = self.num_tasks();
        let mut v = self.mu.clone();
        for i in 0..m {
            for j in 0..=i {
                v.push(if i == j { self.lt[i][i].ln() } else { self.lt[i][j] });
            }
        }
        v.push(self.log_length_scale);
        v.extend(&self.log_noise);
        v
    }

    pub fn from_vec(num_tasks: usize, v: &[f64]) -> Self {
        let m = num_tasks;
        assert_eq!(v.len(), Self::num_params(m));
        let mu = v[..m].to_vec();
        let mut lt = vec![vec![0.0; m]; m];
        let mut k = m;
        for i in 0..m {
            for j in 0..=i {
                lt[i][j] = if i == j { v[k].exp() } else { v[k] };
                k += 1;
            }
        }
        let log_length_scale = v[k];
        let log_noise = v[k + 1..].to_vec();
        Self { mu, lt, log_length_scale, log_noise }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pt(a: f64, b: f64) -> SearchPoint {
        SearchPoint::new(a, b).unwrap()
    }

    #[test]
    fn matern_values() {
        assert_eq!(matern52(&pt(0.5, 0.5), &pt(0.5, 0.5), 1.3), 1.0);
        let v = matern52(&pt(0.0, 0.0), &pt(1.0, 0.0), 1.0);
        let s5 = 5f64.sqrt();
        assert!((v - (1.0 + s5 + 5.0 / 3.0) * (-s5).exp()).abs() < 1e-15);
        assert!((v - 0.523_994_11).abs() < 1e-8);
        assert!(matern52(&pt(-3.0, -3.0), &pt(3.0, 3.0), 0.05) < 1e-30);
    }

    #[test]
    fn cross_task_kernel_cases() {
        let mut p = MtgpHyperparams::isotropic(2, 0.0, 1.0, 1.0, 0.1);
        assert_eq!(cross_task_kernel(&pt(0.0, 0.0), 0, &pt(0.0, 0.0), 1, &p), 0.0);
        p.lt = vec![vec![0.5, 0.0], vec![1.5, 1e-3]];
        let (a, b) = (pt(0.1, 0.2), pt(-0.4, 1.0));
        let kx = matern52(&a, &b, 1.0);
        assert!((cross_task_kernel(&a, 0, &b, 1, &p) - 0.5 * 1.5 * kx).abs() < 1e-15);
        assert!((cross_task_kernel(&a, 0, &a, 0, &p) - 0.25).abs() < 1e-15);
    }

    #[test]
    fn param_vector_round_trip() {
        let p = MtgpHyperparams {
            mu: vec![0.1, -0.2, 0.3],
            lt: vec![vec![1.0, 0.0, 0.0], vec![0.4, 2.0, 0.0], vec![-0.3, 0.2, 0.5]],
            log_length_scale: 0.7,
            log_noise: vec![-1.0, -2.0, -3.0],
        };
        let v = p.to_vec();
        assert_eq!(v.len(), MtgpHyperparams::num_params(3));
        assert_eq!(MtgpHyperparams::num_params(9), 64);
        let q = MtgpHyperparams::from_vec(3, &v);
        for (a, b) in p.to_vec().iter().zip(q.to_vec()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn observation_set_rules() {
        let mut s = ObservationSet::new(2);
        s.push(Observation::new(pt(0.0, 0.0), 0, 1.0)).unwrap();
        assert_eq!(s.design(), Design::Irregular);
        s.push(Observation::new(pt(0.0, 0.0), 1, 2.0)).unwrap();
        assert_eq!(s.design(), Design::Block);
        assert!(matches!(s.push(Observation::new(pt(0.0, 0.0), 1, 3.0)), Err(GpError::Duplicate { .. })));
        assert!(s.push(Observation::new(pt(0.0, 0.0), 2, 3.0)).is_err());
        assert!(s.push(Observation::new(pt(1.0, 0.0), 0, f64::NAN)).is_err());
        assert!(SearchPoint::new(3.1, 0.0).is_err());
        s.push(Observation::new(pt(1.0, 0.0), 0, 0.5)).unwrap();
        assert_eq!(s.design(), Design::Irregular);
        assert_eq!(s.distinct_points().1, vec![0, 0, 1]);
    }

    #[test]
    fn corners_map_to_box_ends() {
        let lo = pt(-3.0, -3.0);
        let hi = pt(3.0, 3.0);
        assert_eq!((lo.c(), lo.gamma()), (1e-3, 1e-3));
        assert_eq!((hi.c(), hi.gamma()), (1e3, 1e3));
    }
}
