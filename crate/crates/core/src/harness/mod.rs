//! Experiment orchestration: phantom cohorts, per-strategy datasets, loss
//! landscapes and RMSE, synthetic task families, and STBO/MTBO comparison
//! reports.

mod datasets;
mod landscape;
mod phantom;
mod report;
mod synthetic;

pub use datasets::{build_datasets, DatasetBuild, RejectedCase};
pub use landscape::{
    eval_grid, eval_landscape, grid_coord, grid_point, predicted_surface, read_landscapes, rms_error, rmse,
    rmse_of_surface, write_landscapes, DatasetObjective, LandscapeGrid, Rmse, LANDSCAPE_COLUMNS,
};
pub use phantom::{gen_phantom, read_phantoms, write_phantoms, PhantomCase, PhantomSpec};
pub use report::{
    build_report, compare_runs, evals_to_target, merge_task_traces, write_curves, write_surfaces, CompareConfig,
    Comparison, OptimumSummary, Reference, ReportSummary, RunReport, TaskReport, TaskSurface, CURVE_COLUMNS,
    RMSE_FOOTER, SURFACE_COLUMNS,
};
pub use synthetic::{base_surface, synthetic_tasks, SyntheticTask, ORACLE_SIDE};

use thiserror::Error;

use crate::bo::BoError;
use crate::discretize::io::VolumeIoError;
use crate::mtgp::GpError;
use crate::radiomics::RadiomicsError;
use crate::svm::SvmError;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid specification: {0}")]
    InvalidSpec(String),
    #[error("i/o error: {0}")]
    Io(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Volume(#[from] VolumeIoError),
    #[error(transparent)]
    Radiomics(#[from] RadiomicsError),
    #[error(transparent)]
    Svm(#[from] SvmError),
    #[error(transparent)]
    Gp(#[from] GpError),
    #[error(transparent)]
    Bo(#[from] BoError),
}
