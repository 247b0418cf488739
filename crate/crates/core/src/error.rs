use thiserror::Error;

use crate::bo::BoError;
use crate::discretize::DiscretizeError;
use crate::harness::HarnessError;
use crate::mtgp::GpError;
use crate::radiomics::RadiomicsError;
use crate::svm::SvmError;

/// Crate-level error; each module also exposes its own narrower error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Discretize(#[from] DiscretizeError),
    #[error(transparent)]
    Radiomics(#[from] RadiomicsError),
    #[error(transparent)]
    Svm(#[from] SvmError),
    #[error(transparent)]
    Gp(#[from] GpError),
    #[error(transparent)]
    Bo(#[from] BoError),
    #[error(transparent)]
    Harness(#[from] HarnessError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
