use super::{collect, neg_p_log2_p, RadiomicsError, DIRECTIONS, GLCM_NAMES};
use crate::discretize::LevelGrid;

/// Symmetric co-occurrence counts summed over the 13 directions, plus the
/// normalized joint distribution. Entry `(i, j)` is stored at `i * n + j`
/// for zero-based levels.
#[derive(Clone, Debug, PartialEq)]
pub struct CooccurrenceMatrix {
    pub num_levels: usize,
    pub counts: Vec<f64>,
    pub normalized: Vec<f64>,
}

impl CooccurrenceMatrix {
    /// Builds a matrix from a (symmetric) normalized distribution.
    pub fn from_probabilities(num_levels: usize, p: Vec<f64>) -> Self {
        assert_eq!(p.len(), num_levels * num_levels);
        Self { num_levels, counts: p.clone(), normalized: p }
    }

    /// `p(i, j)` for one-based levels.
    pub fn p(&self, i: usize, j: usize) -> f64 {
        self.normalized[(i - 1) * self.num_levels + (j - 1)]
    }
}

/// Counts neighbouring voxel pairs at distance 1 in every direction. Pairs
/// with either voxel outside the mask are skipped.
pub fn compute_glcm(grid: &LevelGrid) -> Result<CooccurrenceMatrix, RadiomicsError> {
    let ng = grid.num_levels as usize;
    let mut counts = vec![0.0; ng * ng];
    let [nx, ny, nz] = grid.dims;
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                let a = grid.levels[grid.index(x, y, z)];
                if a == 0 {
                    continue;
                }
                let a = usize::from(a) - 1;
                for d in &DIRECTIONS {
                    if let Some(b) = grid.at(x as isize + d[0], y as isize + d[1], z as isize + d[2]) {
                        let b = usize::from(b) - 1;
                        counts[a * ng + b] += 1.0;
                        counts[b * ng + a] += 1.0;
                    }
                }
            }
        }
    }
    let total: f64 = counts.iter().sum();
    if total == 0.0 {
        return Err(RadiomicsError::EmptyMatrix("GLCM"));
    }
    let normalized = counts.iter().map(|c| c / total).collect();
    Ok(CooccurrenceMatrix { num_levels: ng, counts, normalized })
}

/// The 23 GLCM features in canonical order. Only correlation can be
/// undefined (zero marginal variance).
pub fn glcm_features(m: &CooccurrenceMatrix) -> Result<Vec<f64>, RadiomicsError> {
    collect(&GLCM_NAMES, glcm_feature_values(m))
}

/// Like [`glcm_features`] but keeps the defined values when some are not.
pub fn glcm_feature_values(m: &CooccurrenceMatrix) -> Vec<Option<f64>> {
    let ng = m.num_levels;
    let p = |i: usize, j: usize| m.normalized[i * ng + j];
    let lvl = |i: usize| (i + 1) as f64;

    let mut px = vec![0.0; ng];
    let mut py = vec![0.0; ng];
    let mut p_sum = vec![0.0; 2 * ng + 1]; // index k = i + j (one-based levels), 2..=2ng
    let mut p_diff = vec![0.0; ng]; // index k = |i - j|
    for i in 0..ng {
        for j in 0..ng {
            let v = p(i, j);
            px[i] += v;
            py[j] += v;
            p_sum[i + j + 2] += v;
            p_diff[i.abs_diff(j)] += v;
        }
    }
    let mu_x: f64 = px.iter().enumerate().map(|(i, v)| lvl(i) * v).sum();
    let mu_y: f64 = py.iter().enumerate().map(|(j, v)| lvl(j) * v).sum();
    let var_x: f64 = px.iter().enumerate().map(|(i, v)| (lvl(i) - mu_x).powi(2) * v).sum();
    let var_y: f64 = py.iter().enumerate().map(|(j, v)| (lvl(j) - mu_y).powi(2) * v).sum();

    let (mut autocorr, mut prominence, mut shade, mut tendency) = (0.0, 0.0, 0.0, 0.0);
    let (mut contrast, mut dissimilarity, mut energy, mut entropy) = (0.0, 0.0, 0.0, 0.0);
    let (mut homogeneity, mut idm, mut idmn, mut idn) = (0.0, 0.0, 0.0, 0.0);
    let (mut max_prob, mut variance, mut hxy1, mut hxy2) = (0.0_f64, 0.0, 0.0, 0.0);
    let ngf = ng as f64;
    for i in 0..ng {
        for j in 0..ng {
            let v = p(i, j);
            let pxy = px[i] * py[j];
            if pxy > 0.0 {
                hxy2 -= pxy * pxy.log2();
            }
            if v == 0.0 {
                continue;
            }
            let (a, b) = (lvl(i), lvl(j));
            let diff = (a - b).abs();
            let c = a + b - mu_x - mu_y;
            autocorr += a * b * v;
            prominence += c.powi(4) * v;
            shade += c.powi(3) * v;
            tendency += c * c * v;
            contrast += diff * diff * v;
            dissimilarity += diff * v;
            energy += v * v;
            entropy += neg_p_log2_p(v);
            homogeneity += v / (1.0 + diff);
            idm += v / (1.0 + diff * diff);
            idmn += v / (1.0 + diff * diff / (ngf * ngf));
            idn += v / (1.0 + diff / ngf);
            max_prob = max_prob.max(v);
            variance += (a - mu_x).powi(2) * v;
            hxy1 -= v * pxy.log2();
        }
    }

    let correlation = {
        let denom = (var_x * var_y).sqrt();
        (var_x > 1e-14 && var_y > 1e-14).then(|| (autocorr - mu_x * mu_y) / denom)
    };

    let diff_avg: f64 = p_diff.iter().enumerate().map(|(k, v)| k as f64 * v).sum();
    let diff_entropy: f64 = p_diff.iter().map(|&v| neg_p_log2_p(v)).sum();
    let diff_variance: f64 = p_diff.iter().enumerate().map(|(k, v)| (k as f64 - diff_avg).powi(2) * v).sum();
    let inverse_variance: f64 = p_diff.iter().enumerate().skip(1).map(|(k, v)| v / (k * k) as f64).sum();

    let sum_avg: f64 = p_sum.iter().enumerate().map(|(k, v)| k as f64 * v).sum();
    let sum_entropy: f64 = p_sum.iter().map(|&v| neg_p_log2_p(v)).sum();
    let sum_variance: f64 = p_sum.iter().enumerate().map(|(k, v)| (k as f64 - sum_avg).powi(2) * v).sum();

    let hx: f64 = px.iter().map(|&v| neg_p_log2_p(v)).sum();
    let hy: f64 = py.iter().map(|&v| neg_p_log2_p(v)).sum();
    let hmax = hx.max(hy);
    // a single occupied level has HX = HY = 0; IMC1 is taken as 0 there
    let imc1 = if hmax > 0.0 { (entropy - hxy1) / hmax } else { 0.0 };
    let imc2 = (1.0 - (-2.0 * (hxy2 - entropy)).exp()).max(0.0).sqrt();

    vec![
        Some(autocorr),
        Some(prominence),
        Some(shade),
        Some(tendency),
        Some(contrast),
        correlation,
        Some(diff_entropy),
        Some(diff_variance),
        Some(dissimilarity),
        Some(energy),
        Some(entropy),
        Some(homogeneity),
        Some(imc1),
        Some(imc2),
        Some(idm),
        Some(idmn),
        Some(idn),
        Some(inverse_variance),
        Some(max_prob),
        Some(mu_x),
        Some(sum_entropy),
        Some(sum_variance),
        Some(variance),
    ]
}
