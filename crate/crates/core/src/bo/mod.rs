//! Expected improvement, its maximizer, and the single-task and multi-task
//! Bayesian optimization loops.

mod acquisition;
mod loops;
mod trace;

pub use acquisition::{
    candidate_points, ei_from_moments, expected_improvement, maximize_ei, Acquisition, AcquisitionBudget, Posterior,
};
pub use loops::{
    mtbo_run, stbo_run, task_optima, FnObjective, MtboConfig, MtboResult, Objective, ObjectiveValue, StboConfig,
    SurrogateSettings, TaskOptimum, YBestRule,
};
pub use trace::{best_so_far, read_trace_csv, write_trace_csv, TraceFlag, TraceRecord, TRACE_COLUMNS};

pub use crate::mtgp::InferenceMode;

use thiserror::Error;

use crate::mtgp::GpError;

#[derive(Debug, Error)]
pub enum BoError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    /// The surrogate could not be fitted; `trace` holds every evaluation
    /// made before the failure.
    #[error("optimization aborted after {} evaluations: {source}", trace.len())]
    Aborted { source: GpError, trace: Vec<TraceRecord> },
}
