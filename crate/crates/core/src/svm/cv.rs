use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{train_svm, Dataset, SvmError, SvmHyperparams};
use crate::rng::{rng_from, stream};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CvConfig {
    pub k: usize,
    pub seed: u64,
    pub stratified: bool,
}

impl CvConfig {
    pub fn new(k: usize, seed: u64) -> Self {
        assert!(k >= 2, "need at least 2 folds");
        Self { k, seed, stratified: true }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CvOutcome {
    /// Pooled misclassification rate; 1.0 if any fold failed to converge.
    pub loss: f64,
    pub non_converged: bool,
}

/// Per-feature z-score from training rows. Constant features are centered
/// but left unscaled.
#[derive(Clone, Debug, PartialEq)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    pub fn fit(rows: &[Vec<f64>]) -> Self {
        let d = rows.first().map_or(0, Vec::len);
        let n = rows.len() as f64;
        let mut mean = vec![0.0; d];
        for r in rows {
            for (m, v) in mean.iter_mut().zip(r) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; d];
        for r in rows {
            for ((s, v), m) in var.iter_mut().zip(r).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let scale = var
            .into_iter()
            .map(|s| {
                let sd = if n > 1.0 { (s / (n - 1.0)).sqrt() } else { 0.0 };
                if sd > 1e-12 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Self { mean, scale }
    }

    pub fn apply(&self, row: &[f64]) -> Vec<f64> {
        row.iter().zip(&self.mean).zip(&self.scale).map(|((v, m), s)| (v - m) / s).collect()
    }
}

/// Fold index for every row. Rows are keyed by sorted case id so the result
/// does not depend on row order; each class is shuffled and dealt round-robin
/// with a counter shared across classes.
pub fn fold_assignment(data: &Dataset, cfg: &CvConfig) -> Vec<usize> {
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.sort_by(|&a, &b| data.case_ids[a].cmp(&data.case_ids[b]));
    let mut rng = rng_from(cfg.seed, &[stream::FOLDS]);
    let groups: Vec<Vec<usize>> = if cfg.stratified {
        [-1i8, 1].iter().map(|&c| order.iter().copied().filter(|&i| data.labels[i] == c).collect()).collect()
    } else {
        vec![order]
    };
    let mut folds = vec![0; data.len()];
    let mut counter = 0;
    for mut g in groups {
        g.shuffle(&mut rng);
        for i in g {
            folds[i] = counter % cfg.k;
            counter += 1;
        }
    }
    folds
}

/// Stratified k-fold misclassification rate. Standardization statistics come
/// from each training fold only. A training fold holding a single class
/// predicts that class.
pub fn cv_loss(data: &Dataset, hp: SvmHyperparams, cfg: &CvConfig) -> CvOutcome {
    let folds = fold_assignment(data, cfg);
    let results: Vec<Result<usize, SvmError>> = (0..cfg.k)
        .into_par_iter()
        .map(|f| {
            let train: Vec<usize> = (0..data.len()).filter(|&i| folds[i] != f).collect();
            let test: Vec<usize> = (0..data.len()).filter(|&i| folds[i] == f).collect();
            if test.is_empty() || train.is_empty() {
                return Ok(0);
            }
            let mut tr = data.subset(&train);
            let std = Standardizer::fit(&tr.features);
            tr.features = tr.features.iter().map(|r| std.apply(r)).collect();
            let predict: Box<dyn Fn(&[f64]) -> i8> = match train_svm(&tr, hp) {
                Ok(m) => Box::new(move |x| m.predict(x)),
                Err(SvmError::SingleClass) => {
                    let only = tr.labels[0];
                    Box::new(move |_| only)
                }
                Err(e) => return Err(e),
            };
            Ok(test.iter().filter(|&&i| predict(&std.apply(&data.features[i])) != data.labels[i]).count())
        })
        .collect();
    let mut errors = 0;
    for r in results {
        match r {
            Ok(e) => errors += e,
            Err(_) => return CvOutcome { loss: 1.0, non_converged: true },
        }
    }
    CvOutcome { loss: errors as f64 / data.len() as f64, non_converged: false }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn blobs(n: usize, sep: f64, seed: u64) -> Dataset {
        let mut rng = rng_from(seed, &[1]);
        let labels: Vec<i8> = (0..n).map(|i| if i % 2 == 0 { 1 } else { -1 }).collect();
        let features = labels
            .iter()
            .map(|&l| vec![f64::from(l) * sep + rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0) * 100.0])
            .collect();
        let ids = (0..n).map(|i| format!("case{i:03}")).collect();
        Dataset::new(vec!["a".into(), "b".into()], ids, labels, features).unwrap()
    }

    #[test]
    fn folds_are_stratified_and_balanced() {
        let d = blobs(40, 1.0, 3);
        let f = fold_assignment(&d, &CvConfig::new(10, 9));
        for k in 0..10 {
            let members: Vec<usize> = (0..40).filter(|&i| f[i] == k).collect();
            assert_eq!(members.len(), 4);
            assert!(members.iter().any(|&i| d.labels[i] == 1) && members.iter().any(|&i| d.labels[i] == -1));
        }
    }

    #[test]
    fn separable_data_has_zero_loss() {
        let d = blobs(40, 5.0, 1);
        let out = cv_loss(&d, SvmHyperparams::new(1.0, 0.1).unwrap(), &CvConfig::new(5, 2));
        assert_eq!(out, CvOutcome { loss: 0.0, non_converged: false });
    }

    #[test]
    fn deterministic_and_row_order_invariant() {
        let d = blobs(30, 0.3, 5);
        let hp = SvmHyperparams::new(3.0, 0.7).unwrap();
        let cfg = CvConfig::new(10, 11);
        let a = cv_loss(&d, hp, &cfg);
        assert_eq!(a.loss.to_bits(), cv_loss(&d, hp, &cfg).loss.to_bits());
        let rev: Vec<usize> = (0..d.len()).rev().collect();
        assert_eq!(a, cv_loss(&d.subset(&rev), hp, &cfg));
    }

    #[test]
    fn memorizing_kernel_on_random_labels_is_near_chance() {
        let mut rng = rng_from(77, &[2]);
        let n = 60;
        let labels: Vec<i8> = (0..n).map(|i| if i < n / 2 { 1 } else { -1 }).collect();
        let features = (0..n).map(|_| (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let ids = (0..n).map(|i| format!("r{i:03}")).collect();
        let d = Dataset::new((0..4).map(|i| format!("f{i}")).collect(), ids, labels, features).unwrap();
        let out = cv_loss(&d, SvmHyperparams::new(1e-3, 1e3).unwrap(), &CvConfig::new(10, 7));
        assert!((out.loss - 0.5).abs() <= 0.15, "{}", out.loss);
    }

    #[test]
    fn standardizer_leaves_constant_columns_unscaled() {
        let s = Standardizer::fit(&[vec![1.0, 5.0], vec![3.0, 5.0]]);
        assert_eq!(s.apply(&[3.0, 7.0]), vec![1.0 / 2f64.sqrt(), 2.0]);
    }
}
