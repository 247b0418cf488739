//! On-disk volumes: a JSON header plus a sibling little-endian raw file.
//!
//! The raw file shares the header's path with the extension replaced by
//! `.raw`. Intensity volumes are `f32`, masks are `u8` with values {0, 1},
//! both stored x-fastest.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{DiscretizeError, DiscretizedRoi, IntensityVolume, VoxelMask};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VolumeHeader {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    pub dtype: String,
    pub order: String,
}

pub const ORDER: &str = "x-fastest";

#[derive(Debug, thiserror::Error)]
pub enum VolumeIoError {
    #[error("i/o error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("bad header {path}: {msg}")]
    Header { path: PathBuf, msg: String },
    #[error(transparent)]
    Invalid(#[from] DiscretizeError),
}

pub fn raw_path(header: &Path) -> PathBuf {
    header.with_extension("raw")
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> VolumeIoError + '_ {
    move |source| VolumeIoError::Io { path: path.to_path_buf(), source }
}

fn read_header(path: &Path, dtype: &str) -> Result<VolumeHeader, VolumeIoError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let header: VolumeHeader = serde_json::from_str(&text)
        .map_err(|e| VolumeIoError::Header { path: path.to_path_buf(), msg: e.to_string() })?;
    let bad = |msg: String| VolumeIoError::Header { path: path.to_path_buf(), msg };
    if header.dtype != dtype {
        return Err(bad(format!("dtype {:?}, expected {dtype:?}", header.dtype)));
    }
    if header.order != ORDER {
        return Err(bad(format!("order {:?}, expected {ORDER:?}", header.order)));
    }
    Ok(header)
}

fn write_header(path: &Path, header: &VolumeHeader) -> Result<(), VolumeIoError> {
    let text = serde_json::to_string_pretty(header).expect("header serializes");
    fs::write(path, text).map_err(io_err(path))
}

pub fn read_volume(header_path: &Path) -> Result<IntensityVolume, VolumeIoError> {
    let h = read_header(header_path, "f32")?;
    let raw = raw_path(header_path);
    let bytes = fs::read(&raw).map_err(io_err(&raw))?;
    if bytes.len() % 4 != 0 {
        return Err(VolumeIoError::Header { path: raw, msg: "length not a multiple of 4".into() });
    }
    let data = bytes.chunks_exact(4).map(|c| f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]]))).collect();
    Ok(IntensityVolume::new(h.dims, h.spacing, data)?)
}

/// Writes intensities as `f32`; values are rounded to single precision.
pub fn write_volume(header_path: &Path, vol: &IntensityVolume) -> Result<(), VolumeIoError> {
    write_header(
        header_path,
        &VolumeHeader { dims: vol.dims(), spacing: vol.spacing(), dtype: "f32".into(), order: ORDER.into() },
    )?;
    let bytes: Vec<u8> = vol.data().iter().flat_map(|&v| (v as f32).to_le_bytes()).collect();
    let raw = raw_path(header_path);
    fs::write(&raw, bytes).map_err(io_err(&raw))
}

pub fn read_mask(header_path: &Path) -> Result<VoxelMask, VolumeIoError> {
    let h = read_header(header_path, "u8")?;
    let raw = raw_path(header_path);
    let bytes = fs::read(&raw).map_err(io_err(&raw))?;
    if let Some(b) = bytes.iter().find(|&&b| b > 1) {
        return Err(VolumeIoError::Header { path: raw, msg: format!("mask value {b} not in {{0, 1}}") });
    }
    Ok(VoxelMask::new(h.dims, bytes.into_iter().map(|b| b == 1).collect())?)
}

pub fn write_mask(header_path: &Path, mask: &VoxelMask, spacing: [f64; 3]) -> Result<(), VolumeIoError> {
    write_header(header_path, &VolumeHeader { dims: mask.dims(), spacing, dtype: "u8".into(), order: ORDER.into() })?;
    let bytes: Vec<u8> = mask.data().iter().map(|&b| u8::from(b)).collect();
    let raw = raw_path(header_path);
    fs::write(&raw, bytes).map_err(io_err(&raw))
}

/// Metadata written next to a raw `u16` level grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelSidecar {
    pub q0: f64,
    #[serde(rename = "qN")]
    pub qn: f64,
    #[serde(rename = "N_g")]
    pub num_bins: u32,
    pub dims: [usize; 3],
    pub order: String,
    pub dtype: String,
    /// Level written for voxels outside the mask.
    pub outside_value: u16,
    pub masked_voxels: usize,
}

/// Writes the full level grid (0 outside the mask) as raw little-endian `u16`
/// at `out`, and the sidecar at `out` with a `.json` extension.
pub fn write_levels(out: &Path, roi: &DiscretizedRoi) -> Result<PathBuf, VolumeIoError> {
    let grid = roi.level_grid();
    let bytes: Vec<u8> = grid.levels.iter().flat_map(|l| l.to_le_bytes()).collect();
    fs::write(out, bytes).map_err(io_err(out))?;
    let sidecar = LevelSidecar {
        q0: roi.q0,
        qn: roi.qn,
        num_bins: roi.num_levels,
        dims: roi.dims(),
        order: ORDER.into(),
        dtype: "u16".into(),
        outside_value: 0,
        masked_voxels: roi.levels.len(),
    };
    let side = out.with_extension("json");
    fs::write(&side, serde_json::to_string_pretty(&sidecar).expect("sidecar serializes")).map_err(io_err(&side))?;
    Ok(side)
}
