use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::discretize::io::{read_mask, read_volume, write_mask, write_volume};
use crate::discretize::{IntensityVolume, VoxelMask};
use crate::rng::{rng_from, stream};

const BASE_INTENSITY: f64 = 100.0;
const TEXTURE_SD: f64 = 20.0;

/// Synthetic nodule cohort parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhantomSpec {
    pub n_cases: usize,
    pub dims: [usize; 3],
    /// Nodule radius in voxels, drawn uniformly from `[min, max]`.
    pub radius_range: (f64, f64),
    /// Class +1 mean shift and speckle sd, in units of the texture sd.
    pub class_effect: f64,
    pub noise_sd: f64,
    pub seed: u64,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        Self { n_cases: 60, dims: [24; 3], radius_range: (4.0, 8.0), class_effect: 0.5, noise_sd: 5.0, seed: 0 }
    }
}

impl PhantomSpec {
    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::InvalidSpec(m));
        if self.n_cases < 20 {
            return bad(format!("n_cases = {} < 20", self.n_cases));
        }
        let (lo, hi) = self.radius_range;
        let fit = *self.dims.iter().min().unwrap() as f64 / 2.0 - 2.0;
        if !(lo >= 1.5 && lo <= hi && hi <= fit) {
            return bad(format!("radius range ({lo}, {hi}) must satisfy 1.5 ≤ min ≤ max ≤ {fit}"));
        }
        if !(self.class_effect >= 0.0 && self.class_effect.is_finite()) {
            return bad(format!("class_effect = {}", self.class_effect));
        }
        if !(self.noise_sd >= 0.0 && self.noise_sd.is_finite()) {
            return bad(format!("noise_sd = {}", self.noise_sd));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PhantomCase {
    pub case_id: String,
    pub label: i8,
    pub volume: IntensityVolume,
    pub mask: VoxelMask,
}

/// One pass of a 3-voxel box filter along each axis, clamped at the borders.
fn box_blur(field: &[f64], dims: [usize; 3]) -> Vec<f64> {
    let [nx, ny, nz] = dims;
    let idx = |x: usize, y: usize, z: usize| x + nx * (y + ny * z);
    let mut cur = field.to_vec();
    for axis in 0..3 {
        let mut next = vec![0.0; cur.len()];
        for z in 0..nz {
            for y in 0..ny {
                for x in 0..nx {
                    let p = [x, y, z];
                    let n = dims[axis];
                    let mut acc = 0.0;
                    for d in [-1isize, 0, 1] {
                        let mut q = p;
                        q[axis] = (p[axis] as isize + d).clamp(0, n as isize - 1) as usize;
                        acc += cur[idx(q[0], q[1], q[2])];
                    }
                    next[idx(x, y, z)] = acc / 3.0;
                }
            }
        }
        cur = next;
    }
    cur
}

/// Case `index` of the cohort. Labels alternate −1, +1 so both classes are
/// always present and balanced.
fn gen_case(spec: &PhantomSpec, index: usize) -> PhantomCase {
    let mut rng = rng_from(spec.seed, &[stream::PHANTOM, index as u64]);
    let label: i8 = if index % 2 == 0 { -1 } else { 1 };
    let dims = spec.dims;
    let len = dims.iter().product::<usize>();

    let mut centre = [0.0; 3];
    for (c, &d) in centre.iter_mut().zip(&dims) {
        *c = (d as f64 - 1.0) / 2.0 + rng.gen_range(-1.5..=1.5);
    }
    let radius = rng.gen_range(spec.radius_range.0..=spec.radius_range.1);

    let white: Vec<f64> = (0..len).map(|_| rng.sample(StandardNormal)).collect();
    let smooth = box_blur(&box_blur(&white, dims), dims);
    let mean = smooth.iter().sum::<f64>() / len as f64;
    let sd = (smooth.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / len as f64).sqrt();

    let shift = if label == 1 { spec.class_effect * TEXTURE_SD } else { 0.0 };
    let speckle = if label == 1 { spec.class_effect * TEXTURE_SD } else { 0.0 };
    let mut data = Vec::with_capacity(len);
    let mut inside = Vec::with_capacity(len);
    for z in 0..dims[2] {
        for y in 0..dims[1] {
            for x in 0..dims[0] {
                let i = x + dims[0] * (y + dims[1] * z);
                let r2 =
                    (x as f64 - centre[0]).powi(2) + (y as f64 - centre[1]).powi(2) + (z as f64 - centre[2]).powi(2);
                let noise: f64 = rng.sample::<f64, _>(StandardNormal) * spec.noise_sd;
                let in_roi = r2 <= radius * radius;
                let v = if in_roi {
                    let s: f64 = rng.sample(StandardNormal);
                    BASE_INTENSITY + TEXTURE_SD * (smooth[i] - mean) / sd + shift + speckle * s + noise
                } else {
                    noise
                };
                // stored as f32 on disk; round now so a write/read cycle is lossless
                data.push(v as f32 as f64);
                inside.push(in_roi);
            }
        }
    }
    PhantomCase {
        case_id: format!("case_{index:04}"),
        label,
        volume: IntensityVolume::new(dims, [1.0; 3], data).expect("finite phantom"),
        mask: VoxelMask::new(dims, inside).expect("mask dims"),
    }
}

/// Seeded cohort of spherical nodules. Class −1 carries smooth Gaussian
/// texture; class +1 adds a mean shift and voxel-wise speckle, both scaled by
/// `class_effect`.
pub fn gen_phantom(spec: &PhantomSpec) -> Result<Vec<PhantomCase>, HarnessError> {
    spec.validate()?;
    Ok((0..spec.n_cases).into_par_iter().map(|i| gen_case(spec, i)).collect())
}

const MANIFEST: &str = "cases.csv";

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |e| HarnessError::Io(format!("{}: {e}", path.display()))
}

/// Writes `cases.csv` (case_id, label, volume, mask) plus one image and one
/// mask volume per case into `dir`.
pub fn write_phantoms(dir: &Path, cases: &[PhantomCase]) -> Result<PathBuf, HarnessError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let manifest = dir.join(MANIFEST);
    let mut w = csv::Writer::from_path(&manifest).map_err(|e| HarnessError::Io(e.to_string()))?;
    w.write_record(["case_id", "label", "volume", "mask"]).map_err(|e| HarnessError::Io(e.to_string()))?;
    for c in cases {
        let vol = format!("{}_image.json", c.case_id);
        let mask = format!("{}_mask.json", c.case_id);
        write_volume(&dir.join(&vol), &c.volume)?;
        write_mask(&dir.join(&mask), &c.mask, c.volume.spacing())?;
        w.write_record([c.case_id.as_str(), &c.label.to_string(), &vol, &mask])
            .map_err(|e| HarnessError::Io(e.to_string()))?;
    }
    w.flush().map_err(io_err(&manifest))?;
    Ok(manifest)
}

/// Reads a cohort written by [`write_phantoms`]; paths in the manifest are
/// relative to its directory.
pub fn read_phantoms(dir: &Path) -> Result<Vec<PhantomCase>, HarnessError> {
    let manifest = dir.join(MANIFEST);
    let mut r = csv::Reader::from_path(&manifest).map_err(|e| HarnessError::Io(e.to_string()))?;
    let mut cases = Vec::new();
    for row in r.records() {
        let row = row.map_err(|e| HarnessError::Io(e.to_string()))?;
        let field =
            |i: usize| row.get(i).ok_or_else(|| HarnessError::Io(format!("short row in {}", manifest.display())));
        let label: i8 = field(1)?.parse().map_err(|_| HarnessError::Io(format!("bad label {:?}", &row[1])))?;
        cases.push(PhantomCase {
            case_id: field(0)?.to_string(),
            label,
            volume: read_volume(&dir.join(field(2)?))?,
            mask: read_mask(&dir.join(field(3)?))?,
        });
    }
    Ok(cases)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> PhantomSpec {
        PhantomSpec { n_cases: 20, dims: [12; 3], radius_range: (2.5, 4.0), ..PhantomSpec::default() }
    }

    #[test]
    fn deterministic_and_balanced() {
        let a = gen_phantom(&small()).unwrap();
        let b = gen_phantom(&small()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.iter().filter(|c| c.label == 1).count(), 10);
        assert!(a.iter().all(|c| c.mask.count() >= 2));
        let other = gen_phantom(&PhantomSpec { seed: 1, ..small() }).unwrap();
        assert_ne!(a[0].volume, other[0].volume);
    }

    #[test]
    fn rejects_bad_specs() {
        assert!(gen_phantom(&PhantomSpec { n_cases: 10, ..small() }).is_err());
        assert!(gen_phantom(&PhantomSpec { radius_range: (5.0, 3.0), ..small() }).is_err());
        assert!(gen_phantom(&PhantomSpec { radius_range: (2.0, 9.0), ..small() }).is_err());
    }

    #[test]
    fn positive_class_is_brighter() {
        let spec = PhantomSpec { class_effect: 2.0, ..small() };
        let cases = gen_phantom(&spec).unwrap();
        let roi_mean = |c: &PhantomCase| {
            let idx = c.mask.indices();
            idx.iter().map(|&i| c.volume.data()[i]).sum::<f64>() / idx.len() as f64
        };
        let mean_of = |l: i8| {
            let v: Vec<f64> = cases.iter().filter(|c| c.label == l).map(roi_mean).collect();
            v.iter().sum::<f64>() / v.len() as f64
        };
        assert!(mean_of(1) - mean_of(-1) > TEXTURE_SD);
    }

    #[test]
    fn disk_round_trip_is_lossless() {
        let cases = gen_phantom(&small()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_phantoms(dir.path(), &cases).unwrap();
        assert_eq!(read_phantoms(dir.path()).unwrap(), cases);
    }
}
