use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::phantom::PhantomCase;
use super::HarnessError;
use crate::discretize::DiscretizationStrategy;
use crate::radiomics::{extract_all, RadiomicsError, FEATURE_NAMES};
use crate::svm::Dataset;

/// A case dropped because some feature was undefined under some strategy.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RejectedCase {
    pub case_id: String,
    pub strategy: String,
    pub features: Vec<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetBuild {
    /// One dataset per strategy, rows in the same case order.
    pub datasets: Vec<Dataset>,
    pub rejected: Vec<RejectedCase>,
}

/// Extracts all features for every (case, strategy) pair. A case with an
/// undefined feature under any strategy is dropped from every dataset so that
/// all datasets share the same cases.
pub fn build_datasets(
    cases: &[PhantomCase],
    strategies: &[DiscretizationStrategy],
) -> Result<DatasetBuild, HarnessError> {
    let per_case: Vec<Result<Vec<Vec<f64>>, RejectedCase>> = cases
        .par_iter()
        .map(|c| {
            strategies
                .iter()
                .map(|&s| match extract_all(&c.volume, &c.mask, s) {
                    Ok(fv) => Ok(Ok(fv.values)),
                    Err(RadiomicsError::UndefinedFeatures(names)) => Ok(Err(RejectedCase {
                        case_id: c.case_id.clone(),
                        strategy: s.label(),
                        features: names.iter().map(|n| n.to_string()).collect(),
                    })),
                    Err(e) => Err(e),
                })
                .collect::<Result<Result<Vec<_>, _>, _>>()
        })
        .collect::<Result<Vec<_>, RadiomicsError>>()?;

    let mut rows: Vec<Vec<Vec<f64>>> = vec![Vec::new(); strategies.len()];
    let mut ids = Vec::new();
    let mut labels = Vec::new();
    let mut rejected = Vec::new();
    for (c, r) in cases.iter().zip(per_case) {
        match r {
            Ok(per_strategy) => {
                ids.push(c.case_id.clone());
                labels.push(c.label);
                for (dst, v) in rows.iter_mut().zip(per_strategy) {
                    dst.push(v);
                }
            }
            Err(rej) => rejected.push(rej),
        }
    }
    let names: Vec<String> = FEATURE_NAMES.iter().map(|s| s.to_string()).collect();
    let datasets = rows
        .into_iter()
        .map(|r| Dataset::new(names.clone(), ids.clone(), labels.clone(), r))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(DatasetBuild { datasets, rejected })
}
