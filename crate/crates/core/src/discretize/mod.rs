//! Intensity discretization of a region of interest.
//!
//! A strategy is a bin count `N_g` together with a rule for the quantization
//! range `[q0, qN]`. Bin edges split the range into `N_g` equal-width bins and
//! each intensity is mapped to the level whose half-open interval
//! `(q_{l-1}, q_l]` contains it. Intensities below `q_1` land in level 1 and
//! intensities above `q_{N_g-1}` in level `N_g`, which also clamps values
//! outside the range (possible under the mean ± k·SD rules).

pub mod io;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DiscretizeError {
    #[error("degenerate quantization range: q0 = qN = {0}")]
    DegenerateRange(f64),
    #[error("mask needs at least 2 voxels, found {0}")]
    TooFewVoxels(usize),
    #[error("dimension mismatch: volume {volume:?} vs mask {mask:?}")]
    DimMismatch { volume: [usize; 3], mask: [usize; 3] },
    #[error("invalid volume: {0}")]
    InvalidVolume(String),
    #[error("invalid strategy: {0}")]
    InvalidStrategy(String),
    #[error("strategy index {0} out of range 0..9")]
    StrategyIndex(usize),
}

/// Raw voxel intensities on a regular grid, x-fastest.
#[derive(Clone, Debug, PartialEq)]
pub struct IntensityVolume {
    dims: [usize; 3],
    spacing: [f64; 3],
    data: Vec<f64>,
}

impl IntensityVolume {
    pub fn new(dims: [usize; 3], spacing: [f64; 3], data: Vec<f64>) -> Result<Self, DiscretizeError> {
        if dims.contains(&0) {
            return Err(DiscretizeError::InvalidVolume(format!("zero dimension in {dims:?}")));
        }
        if spacing.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(DiscretizeError::InvalidVolume(format!("non-positive spacing {spacing:?}")));
        }
        let len = dims.iter().product::<usize>();
        if data.len() != len {
            return Err(DiscretizeError::InvalidVolume(format!(
                "data length {} does not match dims product {len}",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(DiscretizeError::InvalidVolume(format!("non-finite intensity at {i}")));
        }
        Ok(Self { dims, spacing, data })
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Applies `f` to every intensity (used for affine checks and phantoms).
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Self, DiscretizeError> {
        Self::new(self.dims, self.spacing, self.data.iter().map(|&v| f(v)).collect())
    }
}

/// Region-of-interest flags on the same grid as an [`IntensityVolume`].
#[derive(Clone, Debug, PartialEq)]
pub struct VoxelMask {
    dims: [usize; 3],
    data: Vec<bool>,
}

impl VoxelMask {
    pub fn new(dims: [usize; 3], data: Vec<bool>) -> Result<Self, DiscretizeError> {
        let len = dims.iter().product::<usize>();
        if dims.contains(&0) || data.len() != len {
            return Err(DiscretizeError::InvalidVolume(format!(
                "mask data length {} does not match dims {dims:?}",
                data.len()
            )));
        }
        Ok(Self { dims, data })
    }

    pub fn full(dims: [usize; 3]) -> Self {
        Self { dims, data: vec![true; dims.iter().product()] }
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    /// Linear indices of the voxels inside the mask in scan order
    /// (x fastest, then y, then z).
    pub fn indices(&self) -> Vec<usize> {
        self.data.iter().enumerate().filter(|(_, &b)| b).map(|(i, _)| i).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RangeRule {
    MinMax,
    /// `mean ± k·sd` with the sample standard deviation.
    MeanPlusMinusSd {
        k: f64,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscretizationStrategy {
    pub num_bins: u32,
    pub range_rule: RangeRule,
}

impl DiscretizationStrategy {
    pub fn new(num_bins: u32, range_rule: RangeRule) -> Result<Self, DiscretizeError> {
        if num_bins < 2 {
            return Err(DiscretizeError::InvalidStrategy(format!("num_bins {num_bins} < 2")));
        }
        if let RangeRule::MeanPlusMinusSd { k } = range_rule {
            if !(k > 0.0 && k.is_finite()) {
                return Err(DiscretizeError::InvalidStrategy(format!("k = {k} must be positive")));
            }
        }
        Ok(Self { num_bins, range_rule })
    }

    /// Human-readable label, e.g. `N=32, mean ± 2SD`.
    pub fn label(&self) -> String {
        match self.range_rule {
            RangeRule::MinMax => format!("N={}, min-max", self.num_bins),
            RangeRule::MeanPlusMinusSd { k } => format!("N={}, mean ± {}SD", self.num_bins, k),
        }
    }
}

/// The nine strategies: bin counts {16, 32, 64} crossed with ranges
/// {min-max, mean ± 2SD, mean ± 3SD}, range varying fastest.
pub fn strategy_grid() -> Vec<DiscretizationStrategy> {
    let rules = [RangeRule::MinMax, RangeRule::MeanPlusMinusSd { k: 2.0 }, RangeRule::MeanPlusMinusSd { k: 3.0 }];
    [16u32, 32, 64]
        .iter()
        .flat_map(|&n| rules.iter().map(move |&r| DiscretizationStrategy { num_bins: n, range_rule: r }))
        .collect()
}

pub fn strategy_by_index(index: usize) -> Result<DiscretizationStrategy, DiscretizeError> {
    strategy_grid().get(index).copied().ok_or(DiscretizeError::StrategyIndex(index))
}

/// Gray levels of the masked voxels.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscretizedRoi {
    pub strategy: DiscretizationStrategy,
    /// One level per masked voxel, in mask scan order; each in `1..=num_levels`.
    pub levels: Vec<u16>,
    pub num_levels: u32,
    pub q0: f64,
    pub qn: f64,
    dims: [usize; 3],
    voxels: Vec<usize>,
}

impl DiscretizedRoi {
    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    /// Linear grid index of each entry of `levels`.
    pub fn voxel_indices(&self) -> &[usize] {
        &self.voxels
    }

    /// Levels embedded in the full grid; 0 marks voxels outside the mask.
    pub fn level_grid(&self) -> LevelGrid {
        let mut levels = vec![0u16; self.dims.iter().product()];
        for (&idx, &l) in self.voxels.iter().zip(&self.levels) {
            levels[idx] = l;
        }
        LevelGrid { dims: self.dims, levels, num_levels: self.num_levels }
    }
}

/// Dense level grid with 0 for "outside the ROI"; the input to texture matrices.
#[derive(Clone, Debug, PartialEq)]
pub struct LevelGrid {
    pub dims: [usize; 3],
    pub levels: Vec<u16>,
    pub num_levels: u32,
}

impl LevelGrid {
    /// Builds a grid directly (mostly for tests); levels must be in `0..=num_levels`.
    pub fn new(dims: [usize; 3], levels: Vec<u16>, num_levels: u32) -> Self {
        assert_eq!(levels.len(), dims.iter().product::<usize>());
        assert!(levels.iter().all(|&l| u32::from(l) <= num_levels));
        Self { dims, levels, num_levels }
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.dims[0] * (y + self.dims[1] * z)
    }

    /// Level at a signed coordinate, `None` if outside the grid or the mask.
    #[inline]
    pub fn at(&self, x: isize, y: isize, z: isize) -> Option<u16> {
        if x < 0 || y < 0 || z < 0 {
            return None;
        }
        let (x, y, z) = (x as usize, y as usize, z as usize);
        if x >= self.dims[0] || y >= self.dims[1] || z >= self.dims[2] {
            return None;
        }
        match self.levels[self.index(x, y, z)] {
            0 => None,
            l => Some(l),
        }
    }

    pub fn voxel_count(&self) -> usize {
        self.levels.iter().filter(|&&l| l > 0).count()
    }
}

fn check_pair(vol: &IntensityVolume, mask: &VoxelMask) -> Result<(), DiscretizeError> {
    if vol.dims != mask.dims {
        return Err(DiscretizeError::DimMismatch { volume: vol.dims, mask: mask.dims });
    }
    let count = mask.count();
    if count < 2 {
        return Err(DiscretizeError::TooFewVoxels(count));
    }
    Ok(())
}

/// Intensities inside the mask, in scan order.
pub fn masked_intensities(vol: &IntensityVolume, mask: &VoxelMask) -> Result<Vec<f64>, DiscretizeError> {
    check_pair(vol, mask)?;
    Ok(mask.indices().into_iter().map(|i| vol.data[i]).collect())
}

fn range_of(values: &[f64], rule: RangeRule) -> Result<(f64, f64), DiscretizeError> {
    let (q0, qn) = match rule {
        RangeRule::MinMax => {
            let min = values.iter().copied().fold(f64::INFINITY, f64::min);
            let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            (min, max)
        }
        RangeRule::MeanPlusMinusSd { k } => {
            let n = values.len() as f64;
            let mean = values.iter().sum::<f64>() / n;
            let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
            let sd = var.sqrt();
            (mean - k * sd, mean + k * sd)
        }
    };
    if q0 < qn {
        Ok((q0, qn))
    } else {
        Err(DiscretizeError::DegenerateRange(q0))
    }
}

/// Quantization range of the masked intensities under `rule`.
pub fn compute_range(vol: &IntensityVolume, mask: &VoxelMask, rule: RangeRule) -> Result<(f64, f64), DiscretizeError> {
    range_of(&masked_intensities(vol, mask)?, rule)
}

/// Interior edges `q_1 .. q_{N_g-1}`.
pub fn bin_edges(q0: f64, qn: f64, num_bins: u32) -> Vec<f64> {
    debug_assert!(q0 < qn && num_bins >= 2);
    let width = qn - q0;
    (1..num_bins).map(|l| q0 + width * f64::from(l) / f64::from(num_bins)).collect()
}

/// Level for one intensity given the interior edges: `1 + #{edges < value}`.
#[inline]
pub fn level_of(value: f64, edges: &[f64]) -> u16 {
    (1 + edges.partition_point(|&e| e < value)) as u16
}

pub fn discretize(
    vol: &IntensityVolume,
    mask: &VoxelMask,
    strategy: DiscretizationStrategy,
) -> Result<DiscretizedRoi, DiscretizeError> {
    let values = masked_intensities(vol, mask)?;
    let (q0, qn) = range_of(&values, strategy.range_rule)?;
    let edges = bin_edges(q0, qn, strategy.num_bins);
    Ok(DiscretizedRoi {
        strategy,
        levels: values.iter().map(|&v| level_of(v, &edges)).collect(),
        num_levels: strategy.num_bins,
        q0,
        qn,
        dims: vol.dims,
        voxels: mask.indices(),
    })
}
