use super::{collect, neg_p_log2_p, RadiomicsError, FIRST_ORDER_NAMES};
use crate::discretize::DiscretizedRoi;

/// The 13 first-order features. The first 11 use the raw masked intensities
/// (`raw`, in mask scan order); entropy and uniformity use the level histogram.
///
/// Variance and the `sd` in the coefficient of variation use the `n − 1`
/// divisor; skewness and kurtosis are the plain standardized third and fourth
/// central moments (`n` divisor, no excess correction); `mad` is the mean
/// absolute deviation around the mean.
pub fn first_order_features(roi: &DiscretizedRoi, raw: &[f64]) -> Result<Vec<f64>, RadiomicsError> {
    let n = raw.len();
    if n < 2 {
        return Err(RadiomicsError::TooFewVoxels(n));
    }
    assert_eq!(n, roi.levels.len(), "raw intensities must align with the ROI levels");
    let nf = n as f64;

    let mean = raw.iter().sum::<f64>() / nf;
    let (mut m2, mut m3, mut m4, mut abs_dev, mut sq) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for &v in raw {
        let d = v - mean;
        m2 += d * d;
        m3 += d * d * d;
        m4 += d * d * d * d;
        abs_dev += d.abs();
        sq += v * v;
    }
    let var = m2 / (nf - 1.0);
    let (m2n, m3n, m4n) = (m2 / nf, m3 / nf, m4 / nf);
    let has_spread = m2n > 0.0;
    let skewness = has_spread.then(|| m3n / m2n.powf(1.5));
    let kurtosis = has_spread.then(|| m4n / (m2n * m2n));

    let mut sorted = raw.to_vec();
    sorted.sort_by(f64::total_cmp);
    let median = if n % 2 == 1 { sorted[n / 2] } else { 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]) };
    let (min, max) = (sorted[0], sorted[n - 1]);
    let cov = (mean != 0.0).then(|| var.sqrt() / mean);
    let rms = (sq / nf).sqrt();

    let mut hist = vec![0usize; roi.num_levels as usize];
    for &l in &roi.levels {
        hist[usize::from(l) - 1] += 1;
    }
    let entropy: f64 = hist.iter().map(|&c| neg_p_log2_p(c as f64 / nf)).sum();
    let uniformity: f64 = hist.iter().map(|&c| (c as f64 / nf).powi(2)).sum();

    collect(
        &FIRST_ORDER_NAMES,
        vec![
            Some(mean),
            Some(var),
            skewness,
            kurtosis,
            Some(median),
            Some(min),
            Some(abs_dev / nf),
            Some(max),
            Some(max - min),
            cov,
            Some(rms),
            Some(entropy),
            Some(uniformity),
        ],
    )
}
