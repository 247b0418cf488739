//! Radiomic feature extraction: 13 first-order, 23 GLCM and 12 GLRLM
//! features per discretized ROI. Formulas are listed in
//! `docs/feature_formulas.md`; all logarithms are base 2.

mod first_order;
mod glcm;
mod glrlm;

pub use first_order::first_order_features;
pub use glcm::{compute_glcm, glcm_feature_values, glcm_features, CooccurrenceMatrix};
pub use glrlm::{compute_glrlm, compute_glrlm_direction, glrlm_features, RunLengthMatrix};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::discretize::{
    discretize, masked_intensities, DiscretizationStrategy, DiscretizeError, IntensityVolume, VoxelMask,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RadiomicsError {
    #[error("{0} matrix is empty")]
    EmptyMatrix(&'static str),
    #[error("undefined features: {}", .0.join(", "))]
    UndefinedFeatures(Vec<&'static str>),
    #[error("need at least 2 voxels, got {0}")]
    TooFewVoxels(usize),
    #[error(transparent)]
    Discretize(#[from] DiscretizeError),
}

pub const FIRST_ORDER_NAMES: [&str; 13] = [
    "fo_mean",
    "fo_var",
    "fo_skewness",
    "fo_kurtosis",
    "fo_median",
    "fo_min",
    "fo_mad",
    "fo_max",
    "fo_range",
    "fo_cov",
    "fo_rms",
    "fo_entropy",
    "fo_uniformity",
];

pub const GLCM_NAMES: [&str; 23] = [
    "glcm_autocorrelation",
    "glcm_cluster_prominence",
    "glcm_cluster_shade",
    "glcm_cluster_tendency",
    "glcm_contrast",
    "glcm_correlation",
    "glcm_difference_entropy",
    "glcm_difference_variance",
    "glcm_dissimilarity",
    "glcm_energy",
    "glcm_entropy",
    "glcm_homogeneity",
    "glcm_imc1",
    "glcm_imc2",
    "glcm_idm",
    "glcm_idmn",
    "glcm_idn",
    "glcm_inverse_variance",
    "glcm_maximum_probability",
    "glcm_mean",
    "glcm_sum_entropy",
    "glcm_sum_variance",
    "glcm_variance",
];

pub const GLRLM_NAMES: [&str; 12] = [
    "glrlm_gln",
    "glrlm_hgre",
    "glrlm_lre",
    "glrlm_lrhge",
    "glrlm_lrlge",
    "glrlm_lgre",
    "glrlm_n_runs",
    "glrlm_rln",
    "glrlm_rp",
    "glrlm_sre",
    "glrlm_srhge",
    "glrlm_srlge",
];

pub const NUM_FEATURES: usize = 48;

/// Number of leading first-order features computed from raw (unbinned) intensities.
pub const RAW_FIRST_ORDER: usize = 11;

/// All 48 feature names in vector order.
pub const FEATURE_NAMES: [&str; NUM_FEATURES] = {
    let mut out = [""; NUM_FEATURES];
    let mut i = 0;
    while i < 13 {
        out[i] = FIRST_ORDER_NAMES[i];
        i += 1;
    }
    let mut j = 0;
    while j < 23 {
        out[13 + j] = GLCM_NAMES[j];
        j += 1;
    }
    let mut k = 0;
    while k < 12 {
        out[36 + k] = GLRLM_NAMES[k];
        k += 1;
    }
    out
};

/// The 13 unique neighbour offsets at distance 1 in 3D (one of each ± pair).
pub const DIRECTIONS: [[isize; 3]; 13] = [
    [1, 0, 0],
    [-1, 1, 0],
    [0, 1, 0],
    [1, 1, 0],
    [-1, -1, 1],
    [0, -1, 1],
    [1, -1, 1],
    [-1, 0, 1],
    [0, 0, 1],
    [1, 0, 1],
    [-1, 1, 1],
    [0, 1, 1],
    [1, 1, 1],
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub values: Vec<f64>,
}

impl FeatureVector {
    pub fn names() -> &'static [&'static str; NUM_FEATURES] {
        &FEATURE_NAMES
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        FEATURE_NAMES.iter().position(|n| *n == name).map(|i| self.values[i])
    }
}

/// Turns per-feature partial results into values, or the list of undefined names.
pub(crate) fn collect(names: &[&'static str], values: Vec<Option<f64>>) -> Result<Vec<f64>, RadiomicsError> {
    let undefined: Vec<&'static str> =
        names.iter().zip(&values).filter(|(_, v)| v.is_none()).map(|(n, _)| *n).collect();
    if undefined.is_empty() {
        Ok(values.into_iter().flatten().collect())
    } else {
        Err(RadiomicsError::UndefinedFeatures(undefined))
    }
}

/// Discretizes the ROI under `strategy` and computes all 48 features.
///
/// Undefined features from every group are reported together; no value is
/// ever substituted.
pub fn extract_all(
    vol: &IntensityVolume,
    mask: &VoxelMask,
    strategy: DiscretizationStrategy,
) -> Result<FeatureVector, RadiomicsError> {
    let roi = discretize(vol, mask, strategy)?;
    let raw = masked_intensities(vol, mask)?;
    let grid = roi.level_grid();

    let mut undefined = Vec::new();
    let mut values = Vec::with_capacity(NUM_FEATURES);
    let mut take = |r: Result<Vec<f64>, RadiomicsError>| -> Result<(), RadiomicsError> {
        match r {
            Ok(v) => values.extend(v),
            Err(RadiomicsError::UndefinedFeatures(names)) => undefined.extend(names),
            Err(e) => return Err(e),
        }
        Ok(())
    };
    take(first_order_features(&roi, &raw))?;
    take(glcm_features(&compute_glcm(&grid)?))?;
    let rlm = compute_glrlm(&grid)?;
    take(glrlm_features(&rlm, rlm.traversed_voxels() as f64))?;

    if !undefined.is_empty() {
        return Err(RadiomicsError::UndefinedFeatures(undefined));
    }
    debug_assert_eq!(values.len(), NUM_FEATURES);
    Ok(FeatureVector { values })
}

#[inline]
pub(crate) fn neg_p_log2_p(p: f64) -> f64 {
    if p > 0.0 {
        -p * p.log2()
    } else {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::discretize::strategy_grid;

    #[test]
    fn names_are_unique_and_ordered() {
        let mut sorted = FEATURE_NAMES.to_vec();
        sorted.sort_unstable();
        sorted.dedup();
        assert_eq!(sorted.len(), NUM_FEATURES);
        assert_eq!(FEATURE_NAMES[0], "fo_mean");
        assert_eq!(FEATURE_NAMES[13], "glcm_autocorrelation");
        assert_eq!(FEATURE_NAMES[47], "glrlm_srlge");
    }

    #[test]
    fn directions_cover_half_the_neighbourhood() {
        let mut all: Vec<[isize; 3]> = DIRECTIONS.iter().flat_map(|d| [*d, [-d[0], -d[1], -d[2]]]).collect();
        all.sort_unstable();
        all.dedup();
        assert_eq!(all.len(), 26);
    }

    fn textured(dims: [usize; 3]) -> (IntensityVolume, VoxelMask) {
        let n: usize = dims.iter().product();
        let data = (0..n).map(|i| ((i * 37 + 11) % 23) as f64 + (i % 5) as f64 * 0.3).collect();
        (IntensityVolume::new(dims, [1.0; 3], data).unwrap(), VoxelMask::full(dims))
    }

    #[test]
    fn raw_first_order_values_ignore_binning() {
        let (v, m) = textured([5, 4, 3]);
        let grid = strategy_grid();
        let a = extract_all(&v, &m, grid[0]).unwrap();
        let b = extract_all(&v, &m, grid[6]).unwrap();
        assert_eq!(a.values[..RAW_FIRST_ORDER], b.values[..RAW_FIRST_ORDER]);
        assert_ne!(a.values[11], b.values[11]);
    }

    #[test]
    fn every_strategy_gives_48_finite_values() {
        let (v, m) = textured([6, 5, 4]);
        for s in strategy_grid() {
            let f = extract_all(&v, &m, s).unwrap();
            assert_eq!(f.values.len(), 48);
            assert!(f.values.iter().all(|x| x.is_finite()));
        }
    }

    #[test]
    fn constant_volume_fails_loudly() {
        let dims = [3, 3, 3];
        let v = IntensityVolume::new(dims, [1.0; 3], vec![4.0; 27]).unwrap();
        let err = extract_all(&v, &VoxelMask::full(dims), strategy_grid()[0]).unwrap_err();
        assert!(matches!(err, RadiomicsError::Discretize(DiscretizeError::DegenerateRange(_))));
    }

    #[test]
    fn mirrored_volume_has_identical_features() {
        let dims = [5, 4, 3];
        let (v, m) = textured(dims);
        let mut flipped = vec![0.0; v.data().len()];
        for z in 0..dims[2] {
            for y in 0..dims[1] {
                for x in 0..dims[0] {
                    let src = x + dims[0] * (y + dims[1] * z);
                    let dst = (dims[0] - 1 - x) + dims[0] * (y + dims[1] * z);
                    flipped[dst] = v.data()[src];
                }
            }
        }
        let vf = IntensityVolume::new(dims, [1.0; 3], flipped).unwrap();
        for s in strategy_grid() {
            let a = extract_all(&v, &m, s).unwrap();
            let b = extract_all(&vf, &m, s).unwrap();
            for (i, (x, y)) in a.values.iter().zip(&b.values).enumerate() {
                assert!((x - y).abs() <= 1e-9 * x.abs().max(1.0), "{} {x} {y}", FEATURE_NAMES[i]);
            }
        }
    }
}
