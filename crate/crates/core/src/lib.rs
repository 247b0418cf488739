//! Multi-task Bayesian optimization of RBF-SVM hyperparameters.
//!
//! The crate is organized bottom-up:
//!
//! * [`discretize`] turns raw ROI intensities into gray levels under one of
//!   nine binning strategies (each strategy defines one task).
//! * [`radiomics`] extracts first-order, GLCM and GLRLM features from a
//!   discretized ROI.
//! * [`svm`] trains RBF-kernel SVMs with SMO and computes stratified k-fold
//!   cross-validation losses plus the tangent loss transform.
//! * [`mtgp`] is a coregionalized Gaussian process with a Matérn 5/2 input
//!   kernel, fitted by maximum likelihood.
//! * [`bo`] holds expected improvement, its maximizer, and the single-task and
//!   multi-task optimization loops.
//! * [`harness`] ties everything together: phantom data, dataset building,
//!   loss landscapes, RMSE and run comparison reports.

pub mod bo;
pub mod discretize;
pub mod error;
pub mod harness;
pub mod linalg;
pub mod mtgp;
pub mod optim;
pub mod radiomics;
pub mod rng;
pub mod svm;

pub use bo::{
    best_so_far, expected_improvement, maximize_ei, mtbo_run, stbo_run, FnObjective, InferenceMode, MtboConfig,
    MtboResult, Objective, ObjectiveValue, StboConfig, TaskOptimum, TraceFlag, TraceRecord, YBestRule,
};
pub use discretize::{
    discretize, strategy_grid, DiscretizationStrategy, DiscretizedRoi, IntensityVolume, RangeRule, VoxelMask,
};
pub use error::{Error, Result};
pub use mtgp::{MtgpHyperparams, MtgpModel, Observation, ObservationSet, SearchPoint};
pub use radiomics::{extract_all, FeatureVector, FEATURE_NAMES};
pub use svm::{cv_loss, inverse_transform, transform_loss, CvConfig, Dataset, SvmHyperparams};
