use super::{RadiomicsError, DIRECTIONS};
use crate::discretize::LevelGrid;

/// Run counts indexed by (level, run length). Entry for one-based level `i`
/// and run length `j` is stored at `(i - 1) * max_run + (j - 1)`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RunLengthMatrix {
    pub num_levels: usize,
    pub max_run: usize,
    pub counts: Vec<u64>,
}

impl RunLengthMatrix {
    fn empty(num_levels: usize) -> Self {
        Self { num_levels, max_run: 0, counts: Vec::new() }
    }

    pub fn count(&self, level: usize, length: usize) -> u64 {
        if length == 0 || length > self.max_run {
            return 0;
        }
        self.counts[(level - 1) * self.max_run + (length - 1)]
    }

    fn widen(&mut self, max_run: usize) {
        if max_run <= self.max_run {
            return;
        }
        let mut counts = vec![0; self.num_levels * max_run];
        for i in 0..self.num_levels {
            for j in 0..self.max_run {
                counts[i * max_run + j] = self.counts[i * self.max_run + j];
            }
        }
        self.counts = counts;
        self.max_run = max_run;
    }

    fn add_run(&mut self, level: usize, length: usize) {
        self.widen(length);
        self.counts[(level - 1) * self.max_run + (length - 1)] += 1;
    }

    /// Element-wise sum; the result is as wide as the wider input.
    pub fn add(&mut self, other: &RunLengthMatrix) {
        assert_eq!(self.num_levels, other.num_levels);
        self.widen(other.max_run);
        for i in 1..=other.num_levels {
            for j in 1..=other.max_run {
                self.counts[(i - 1) * self.max_run + (j - 1)] += other.count(i, j);
            }
        }
    }

    pub fn total_runs(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Σ count·length: voxels covered by the runs (once per direction).
    pub fn traversed_voxels(&self) -> u64 {
        self.counts.iter().enumerate().map(|(k, &c)| c * (k % self.max_run.max(1) + 1) as u64).sum()
    }
}

/// Maximal runs of equal level along `dir`. Runs stop at the grid boundary
/// and at voxels outside the mask.
pub fn compute_glrlm_direction(grid: &LevelGrid, dir: [isize; 3]) -> Result<RunLengthMatrix, RadiomicsError> {
    let mut m = RunLengthMatrix::empty(grid.num_levels as usize);
    let [nx, ny, nz] = grid.dims;
    for z in 0..nz as isize {
        for y in 0..ny as isize {
            for x in 0..nx as isize {
                let Some(level) = grid.at(x, y, z) else { continue };
                // only start counting at the first voxel of a run
                if grid.at(x - dir[0], y - dir[1], z - dir[2]) == Some(level) {
                    continue;
                }
                let mut len = 1;
                while grid.at(x + len as isize * dir[0], y + len as isize * dir[1], z + len as isize * dir[2])
                    == Some(level)
                {
                    len += 1;
                }
                m.add_run(usize::from(level), len);
            }
        }
    }
    if m.total_runs() == 0 {
        return Err(RadiomicsError::EmptyMatrix("GLRLM"));
    }
    Ok(m)
}

/// Run-length matrix summed over the 13 directions.
pub fn compute_glrlm(grid: &LevelGrid) -> Result<RunLengthMatrix, RadiomicsError> {
    let mut total = RunLengthMatrix::empty(grid.num_levels as usize);
    for d in DIRECTIONS {
        total.add(&compute_glrlm_direction(grid, d)?);
    }
    Ok(total)
}

/// The 12 run-length features in canonical order. `num_voxels` is the run
/// percentage denominator: the masked voxel count for a single direction,
/// or [`RunLengthMatrix::traversed_voxels`] for a direction-summed matrix.
pub fn glrlm_features(m: &RunLengthMatrix, num_voxels: f64) -> Result<Vec<f64>, RadiomicsError> {
    let nr = m.total_runs() as f64;
    if nr == 0.0 {
        return Err(RadiomicsError::EmptyMatrix("GLRLM"));
    }
    let mut level_sums = vec![0.0; m.num_levels];
    let mut length_sums = vec![0.0; m.max_run];
    let (mut hgre, mut lre, mut lrhge, mut lrlge) = (0.0, 0.0, 0.0, 0.0);
    let (mut lgre, mut sre, mut srhge, mut srlge) = (0.0, 0.0, 0.0, 0.0);
    for i in 1..=m.num_levels {
        for j in 1..=m.max_run {
            let c = m.count(i, j) as f64;
            if c == 0.0 {
                continue;
            }
            let (i2, j2) = ((i * i) as f64, (j * j) as f64);
            level_sums[i - 1] += c;
            length_sums[j - 1] += c;
            hgre += c * i2;
            lre += c * j2;
            lrhge += c * i2 * j2;
            lrlge += c * j2 / i2;
            lgre += c / i2;
            sre += c / j2;
            srhge += c * i2 / j2;
            srlge += c / (i2 * j2);
        }
    }
    let gln = level_sums.iter().map(|s| s * s).sum::<f64>() / nr;
    let rln = length_sums.iter().map(|s| s * s).sum::<f64>() / nr;
    Ok(vec![
        gln,
        hgre / nr,
        lre / nr,
        lrhge / nr,
        lrlge / nr,
        lgre / nr,
        nr,
        rln,
        nr / num_voxels,
        sre / nr,
        srhge / nr,
        srlge / nr,
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    const X: [isize; 3] = [1, 0, 0];

    #[test]
    fn runs_along_x() {
        let g = LevelGrid::new([3, 1, 1], vec![1, 1, 2], 2);
        let m = compute_glrlm_direction(&g, X).unwrap();
        assert_eq!(m.count(1, 2), 1);
        assert_eq!(m.count(2, 1), 1);
        assert_eq!(m.total_runs(), 2);
    }

    #[test]
    fn constant_line() {
        let g = LevelGrid::new([4, 1, 1], vec![1; 4], 1);
        let m = compute_glrlm_direction(&g, X).unwrap();
        assert_eq!((m.max_run, m.total_runs()), (4, 1));
        let f = glrlm_features(&m, 4.0).unwrap();
        assert_eq!(f[8], 0.25); // RP
        assert_eq!(f[9], 1.0 / 16.0); // SRE
        assert_eq!(f[2], 16.0); // LRE
    }

    #[test]
    fn distinct_line() {
        let g = LevelGrid::new([3, 1, 1], vec![1, 2, 3], 3);
        let m = compute_glrlm_direction(&g, X).unwrap();
        let f = glrlm_features(&m, 3.0).unwrap();
        assert_eq!((f[6], f[8], f[9]), (3.0, 1.0, 1.0));
    }

    #[test]
    fn singleton() {
        let g = LevelGrid::new([1, 1, 1], vec![1], 1);
        let m = compute_glrlm_direction(&g, X).unwrap();
        let f = glrlm_features(&m, 1.0).unwrap();
        for k in [0, 2, 7, 8, 9] {
            assert_eq!(f[k], 1.0);
        }
    }

    #[test]
    fn two_runs_short_emphasis() {
        let m = RunLengthMatrix { num_levels: 1, max_run: 2, counts: vec![1, 1] };
        let f = glrlm_features(&m, 3.0).unwrap();
        assert_eq!(f[9], 0.625);
    }

    #[test]
    fn single_level_matrix_grey_emphases() {
        let m = RunLengthMatrix { num_levels: 3, max_run: 2, counts: vec![0, 0, 0, 0, 4, 2] };
        let f = glrlm_features(&m, 8.0).unwrap();
        assert_eq!(f[5], 1.0 / 9.0); // LGRE
        assert_eq!(f[1], 9.0); // HGRE
    }

    #[test]
    fn masked_gap_breaks_runs() {
        let g = LevelGrid::new([5, 1, 1], vec![2, 2, 0, 2, 2], 2);
        let m = compute_glrlm_direction(&g, X).unwrap();
        assert_eq!(m.count(2, 2), 2);
        assert_eq!(m.traversed_voxels(), 4);
    }

    #[test]
    fn empty_mask_is_an_error() {
        let g = LevelGrid::new([2, 1, 1], vec![0, 0], 2);
        assert_eq!(compute_glrlm(&g), Err(RadiomicsError::EmptyMatrix("GLRLM")));
    }
}
