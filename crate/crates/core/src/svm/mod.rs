//! RBF-kernel support vector classification, stratified k-fold
//! cross-validation loss, and the tangent loss transform.

mod cv;
mod dataset;
mod smo;

pub use cv::{cv_loss, fold_assignment, CvConfig, CvOutcome, Standardizer};
pub use dataset::Dataset;
pub use smo::{
    dual_objective, max_kkt_violation, predict, solve_dual, train_svm, DualSolution, SvmModel, KKT_TOL, TARGET_TOL,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SvmError {
    #[error("SMO did not converge within {iterations} iterations (violation {violation:.3e})")]
    NonConvergence { iterations: usize, violation: f64 },
    #[error("training data contains a single class")]
    SingleClass,
    #[error("invalid dataset: {0}")]
    InvalidDataset(String),
    #[error("hyperparameter {name} = {value} outside [1e-3, 1e3]")]
    HyperparamRange { name: &'static str, value: f64 },
    #[error("csv error: {0}")]
    Csv(String),
}

pub const HYPERPARAM_MIN: f64 = 1e-3;
pub const HYPERPARAM_MAX: f64 = 1e3;

/// Penalty `C` and RBF width `gamma` (kernel `exp(-gamma·‖x − x′‖²)`).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SvmHyperparams {
    pub c: f64,
    pub gamma: f64,
}

impl SvmHyperparams {
    /// Checked constructor; both values must lie in `[1e-3, 1e3]`.
    pub fn new(c: f64, gamma: f64) -> Result<Self, SvmError> {
        for (name, value) in [("C", c), ("gamma", gamma)] {
            // allow a few ulps of slack for values produced by 10^x
            if !(HYPERPARAM_MIN * (1.0 - 1e-12)..=HYPERPARAM_MAX * (1.0 + 1e-12)).contains(&value) {
                return Err(SvmError::HyperparamRange { name, value });
            }
        }
        Ok(Self { c, gamma })
    }

    /// From log10 coordinates, as used by the optimizer.
    pub fn from_log10(log_c: f64, log_gamma: f64) -> Result<Self, SvmError> {
        Self::new(10f64.powf(log_c), 10f64.powf(log_gamma))
    }
}

/// Clamp applied before the tangent transform so that perfect (or perfectly
/// wrong) classifiers map to finite values.
pub const LOSS_EPS: f64 = 1e-3;

/// `tan(π·L − π/2)` of the loss clamped to `[ε, 1 − ε]`.
pub fn transform_loss(loss: f64) -> f64 {
    let l = loss.clamp(LOSS_EPS, 1.0 - LOSS_EPS);
    (std::f64::consts::PI * l - std::f64::consts::FRAC_PI_2).tan()
}

/// Inverse of [`transform_loss`], clamped to `[ε, 1 − ε]`.
pub fn inverse_transform(f: f64) -> f64 {
    ((f.atan() + std::f64::consts::FRAC_PI_2) / std::f64::consts::PI).clamp(LOSS_EPS, 1.0 - LOSS_EPS)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn transform_examples() {
        assert_eq!(transform_loss(0.5), 0.0);
        assert!((transform_loss(0.25) + 1.0).abs() < 1e-12);
        // tan(π·0.001 − π/2) = −cot(π/1000)
        let expected = -1.0 / (std::f64::consts::PI * 1e-3).tan();
        assert!((transform_loss(0.0) - expected).abs() < 1e-9);
        assert!((transform_loss(0.0) + 318.308_838_3).abs() < 1e-6);
        assert_eq!(transform_loss(-3.0), transform_loss(0.0));
    }

    #[test]
    fn inverse_examples() {
        assert_eq!(inverse_transform(0.0), 0.5);
        assert!((inverse_transform(-1.0) - 0.25).abs() < 1e-15);
        assert!((inverse_transform(transform_loss(0.1884)) - 0.1884).abs() < 1e-12);
        assert_eq!(inverse_transform(f64::NEG_INFINITY), LOSS_EPS);
    }

    #[test]
    fn hyperparam_box() {
        assert!(SvmHyperparams::new(1e-3, 1e3).is_ok());
        assert!(SvmHyperparams::from_log10(-3.0, 3.0).is_ok());
        assert!(SvmHyperparams::new(0.0, 1.0).is_err());
        assert!(SvmHyperparams::new(1.0, 1e4).is_err());
    }

    proptest::proptest! {
        #[test]
        fn transform_is_strictly_increasing(a in LOSS_EPS..1.0 - LOSS_EPS, b in LOSS_EPS..1.0 - LOSS_EPS) {
            proptest::prop_assume!((a - b).abs() > 1e-9);
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            proptest::prop_assert!(transform_loss(lo) < transform_loss(hi));
        }

        #[test]
        fn round_trip(l in LOSS_EPS..=1.0 - LOSS_EPS) {
            proptest::prop_assert!((inverse_transform(transform_loss(l)) - l).abs() <= 1e-12);
        }
    }
}
