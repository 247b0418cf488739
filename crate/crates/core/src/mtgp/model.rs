use serde::{Deserialize, Serialize};

use super::likelihood::{
    assemble, base_jitter, covariance_row, factor_with_jitter, kx_to_points, lml_core, point_kernel, Entries,
};
use super::{GpError, InferenceMode, MtgpHyperparams, Observation, ObservationSet, SearchPoint};
use crate::linalg::{Cholesky, Matrix};

/// Fitted coregionalized GP. Immutable for prediction; observations can be
/// appended with [`MtgpModel::add_observation`], which keeps the
/// hyperparameters and extends the factorization.
#[derive(Clone, Debug)]
pub struct MtgpModel {
    params: MtgpHyperparams,
    train: ObservationSet,
    mode: InferenceMode,
    entries: Entries,
    kt: Vec<Vec<f64>>,
    jitter: f64,
    chol: Cholesky,
    alpha: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct ModelRecord {
    params: MtgpHyperparams,
    train: ObservationSet,
    mode: InferenceMode,
    jitter: f64,
}

fn entries_for(train: &ObservationSet, params: &MtgpHyperparams, mode: InferenceMode) -> Entries {
    match mode {
        InferenceMode::Exact => Entries::exact(train),
        InferenceMode::Impute => Entries::completed(train, &params.mu),
    }
}

impl MtgpModel {
    /// Builds the posterior for fixed hyperparameters.
    pub fn new(train: ObservationSet, params: MtgpHyperparams, mode: InferenceMode) -> Result<Self, GpError> {
        params.check(train.num_tasks())?;
        if train.is_empty() {
            return Err(GpError::Empty);
        }
        let entries = entries_for(&train, &params, mode);
        let kt = params.task_covariance();
        let cov = assemble(&entries, &kt, &point_kernel(&entries.points, params.length_scale()), &params);
        let (chol, jitter) = factor_with_jitter(&cov, base_jitter(&params))?;
        Ok(Self::finish(params, train, mode, entries, kt, jitter, chol))
    }

    fn with_jitter(
        train: ObservationSet,
        params: MtgpHyperparams,
        mode: InferenceMode,
        jitter: f64,
    ) -> Result<Self, GpError> {
        params.check(train.num_tasks())?;
        let entries = entries_for(&train, &params, mode);
        let kt = params.task_covariance();
        let mut cov = assemble(&entries, &kt, &point_kernel(&entries.points, params.length_scale()), &params);
        cov.add_to_diagonal(jitter);
        let chol = Cholesky::factor(&cov).ok_or(GpError::FactorizationFailure { jitter })?;
        Ok(Self::finish(params, train, mode, entries, kt, jitter, chol))
    }

    fn finish(
        params: MtgpHyperparams,
        train: ObservationSet,
        mode: InferenceMode,
        entries: Entries,
        kt: Vec<Vec<f64>>,
        jitter: f64,
        chol: Cholesky,
    ) -> Self {
        let alpha = chol.solve(&entries.residuals(&params.mu));
        Self { params, train, mode, entries, kt, jitter, chol, alpha }
    }

    pub fn params(&self) -> &MtgpHyperparams {
        &self.params
    }

    pub fn train(&self) -> &ObservationSet {
        &self.train
    }

    pub fn mode(&self) -> InferenceMode {
        self.mode
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn num_tasks(&self) -> usize {
        self.train.num_tasks()
    }

    /// Observations the posterior conditions on; in impute mode this
    /// includes the filled-in rows (flagged `imputed`).
    pub fn conditioning_set(&self) -> Vec<Observation> {
        let e = &self.entries;
        (0..e.len())
            .map(|a| Observation { point: e.points[e.point_idx[a]], task: e.task[a], y: e.y[a], imputed: e.imputed[a] })
            .collect()
    }

    /// Posterior mean and variance of the latent function for `task` at `x`.
    pub fn predict(&self, x: &SearchPoint, task: usize) -> (f64, f64) {
        let e = &self.entries;
        let kx = kx_to_points(x, &e.points, self.params.length_scale());
        let ktr = &self.kt[task];
        let k: Vec<f64> = (0..e.len()).map(|a| ktr[e.task[a]] * kx[e.point_idx[a]]).collect();
        let mean = self.params.mu[task] + k.iter().zip(&self.alpha).map(|(a, b)| a * b).sum::<f64>();
        let v = self.chol.solve_lower(&k);
        let prior = ktr[task];
        let var = prior - v.iter().map(|a| a * a).sum::<f64>();
        debug_assert!(var > -1e-8 * prior.max(1.0), "negative posterior variance {var}");
        (mean, var.max(0.0))
    }

    /// Log marginal likelihood of the rows the posterior conditions on.
    pub fn log_marginal_likelihood(&self) -> f64 {
        lml_core(&self.entries, &self.params, false).map_or(f64::NEG_INFINITY, |(l, _)| l)
    }

    /// Appends an observation without refitting. The factorization is
    /// extended row by row, giving the same factor a rebuild would; if the
    /// extension loses definiteness the model is rebuilt with fresh jitter.
    pub fn add_observation(&mut self, obs: Observation) -> Result<(), GpError> {
        self.train.push(obs)?;
        let before = self.entries.len();
        match self.mode {
            InferenceMode::Exact => self.entries.add_exact(&obs),
            InferenceMode::Impute => {
                self.entries.add_completed(&obs, &self.params.mu);
            }
        }
        let kxp = point_kernel(&self.entries.points, self.params.length_scale());
        for a in before..self.entries.len() {
            let mut row = covariance_row(&self.entries, a, &self.kt, &kxp, &self.params);
            row[a] += self.jitter;
            if !self.chol.extend(&row) {
                *self = Self::new(self.train.clone(), self.params.clone(), self.mode)?;
                return Ok(());
            }
        }
        self.alpha = self.chol.solve(&self.entries.residuals(&self.params.mu));
        Ok(())
    }

    /// Dense `Σ0 + jitter·I` over the conditioning rows.
    pub fn covariance(&self) -> Matrix {
        let mut c = assemble(
            &self.entries,
            &self.kt,
            &point_kernel(&self.entries.points, self.params.length_scale()),
            &self.params,
        );
        c.add_to_diagonal(self.jitter);
        c
    }

    /// JSON with the hyperparameters, training set, mode and jitter.
    pub fn to_json(&self) -> String {
        let rec = ModelRecord {
            params: self.params.clone(),
            train: self.train.clone(),
            mode: self.mode,
            jitter: self.jitter,
        };
        serde_json::to_string_pretty(&rec).expect("model record serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, GpError> {
        let rec: ModelRecord = serde_json::from_str(s).map_err(|e| GpError::Serde(e.to_string()))?;
        Self::with_jitter(rec.train, rec.params, rec.mode, rec.jitter)
    }
}

/// Completes `train` to a block design, filling each missing (point, task)
/// response with that task's prior mean. Imputed entries are flagged.
pub fn impute_missing(train: &ObservationSet, params: &MtgpHyperparams) -> Result<ObservationSet, GpError> {
    params.check(train.num_tasks())?;
    let e = Entries::completed(train, &params.mu);
    ObservationSet::from_observations(
        train.num_tasks(),
        (0..e.len()).map(|a| Observation {
            point: e.points[e.point_idx[a]],
            task: e.task[a],
            y: e.y[a],
            imputed: e.imputed[a],
        }),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from;
    use rand::Rng;

    fn pt(a: f64, b: f64) -> SearchPoint {
        SearchPoint::new(a, b).unwrap()
    }

    fn sample_set(m: usize, n: usize, seed: u64) -> ObservationSet {
        let mut rng = rng_from(seed, &[]);
        let mut s = ObservationSet::new(m);
        for _ in 0..n {
            let x = pt(rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0));
            let t = rng.gen_range(0..m);
            s.push(Observation::new(x, t, x.coords[0].sin() + 0.3 * t as f64)).unwrap();
        }
        s
    }

    fn params(m: usize) -> MtgpHyperparams {
        let mut p = MtgpHyperparams::isotropic(m, 0.1, 1.0, 1.5, 0.05);
        for i in 1..m {
            p.lt[i][0] = 0.8;
            p.lt[i][i] = 0.6;
        }
        p
    }

    #[test]
    fn interpolates_training_points_without_noise() {
        let mut s = ObservationSet::new(1);
        s.push(Observation::new(pt(0.5, -1.0), 0, 2.0)).unwrap();
        s.push(Observation::new(pt(-1.0, 1.0), 0, -1.0)).unwrap();
        let p = MtgpHyperparams::isotropic(1, 0.0, 1.0, 1.0, 1e-6);
        let m = MtgpModel::new(s, p, InferenceMode::Exact).unwrap();
        let (mean, var) = m.predict(&pt(0.5, -1.0), 0);
        assert!((mean - 2.0).abs() < 1e-6 && var < 1e-6);
    }

    #[test]
    fn far_away_recovers_prior() {
        let mut s = ObservationSet::new(2);
        s.push(Observation::new(pt(-3.0, -3.0), 0, 5.0)).unwrap();
        let mut p = params(2);
        p.log_length_scale = 0.05f64.ln();
        let m = MtgpModel::new(s, p.clone(), InferenceMode::Exact).unwrap();
        let (mean, var) = m.predict(&pt(3.0, 3.0), 1);
        let kt = p.task_covariance();
        assert!((mean - p.mu[1]).abs() < 1e-12);
        assert!((var - kt[1][1]).abs() < 1e-12);
    }

    #[test]
    fn diagonal_task_covariance_decouples_tasks() {
        let s = sample_set(3, 18, 1);
        let p = MtgpHyperparams::isotropic(3, 0.2, 1.1, 1.2, 0.1);
        let joint = MtgpModel::new(s.clone(), p.clone(), InferenceMode::Exact).unwrap();
        let only: Vec<Observation> =
            s.observations().iter().filter(|o| o.task == 2).map(|o| Observation { task: 0, ..*o }).collect();
        let single_set = ObservationSet::from_observations(1, only).unwrap();
        let single =
            MtgpModel::new(single_set, MtgpHyperparams::isotropic(1, 0.2, 1.1, 1.2, 0.1), InferenceMode::Exact)
                .unwrap();
        for x in [pt(0.0, 0.0), pt(1.3, -2.2), pt(-2.9, 2.5)] {
            let (a, va) = joint.predict(&x, 2);
            let (b, vb) = single.predict(&x, 0);
            assert!((a - b).abs() < 1e-8 && (va - vb).abs() < 1e-8);
        }
    }

    #[test]
    fn permutation_invariance() {
        let s = sample_set(2, 14, 2);
        let mut rev: Vec<Observation> = s.observations().to_vec();
        rev.reverse();
        let s2 = ObservationSet::from_observations(2, rev).unwrap();
        let a = MtgpModel::new(s, params(2), InferenceMode::Exact).unwrap();
        let b = MtgpModel::new(s2, params(2), InferenceMode::Exact).unwrap();
        for x in [pt(0.1, 0.2), pt(2.0, -1.0)] {
            for t in 0..2 {
                let (ma, va) = a.predict(&x, t);
                let (mb, vb) = b.predict(&x, t);
                assert!((ma - mb).abs() < 1e-10 && (va - vb).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn extension_matches_rebuild_bitwise() {
        for mode in [InferenceMode::Exact, InferenceMode::Impute] {
            let s = sample_set(3, 12, 3);
            let obs = s.observations();
            let first = ObservationSet::from_observations(3, obs[..6].iter().copied()).unwrap();
            let mut grown = MtgpModel::new(first, params(3), mode).unwrap();
            for o in &obs[6..] {
                grown.add_observation(*o).unwrap();
            }
            let rebuilt = MtgpModel::new(s.clone(), params(3), mode).unwrap();
            assert_eq!(grown.jitter(), rebuilt.jitter());
            for x in [pt(0.0, 0.0), pt(-1.5, 2.5)] {
                for t in 0..3 {
                    assert_eq!(grown.predict(&x, t), rebuilt.predict(&x, t));
                }
            }
        }
    }

    #[test]
    fn json_round_trip_is_bitwise() {
        let m = MtgpModel::new(sample_set(2, 10, 4), params(2), InferenceMode::Impute).unwrap();
        let back = MtgpModel::from_json(&m.to_json()).unwrap();
        let x = pt(0.3, -0.7);
        assert_eq!(m.predict(&x, 1), back.predict(&x, 1));
    }

    #[test]
    fn impute_fills_prior_means() {
        let mut s = ObservationSet::new(3);
        s.push(Observation::new(pt(0.0, 0.0), 0, 1.0)).unwrap();
        s.push(Observation::new(pt(0.0, 0.0), 1, 2.0)).unwrap();
        let p = MtgpHyperparams::isotropic(3, 0.0, 1.0, 1.0, 0.1);
        let mut p2 = p.clone();
        p2.mu = vec![10.0, 20.0, 30.0];
        let full = impute_missing(&s, &p2).unwrap();
        assert_eq!(full.len(), 3);
        let gap = full.observations().iter().find(|o| o.task == 2).unwrap();
        assert_eq!((gap.y, gap.imputed), (30.0, true));
        // complete set is unchanged apart from order
        let done = impute_missing(&full, &p2).unwrap();
        assert_eq!(done.observations(), full.observations());
    }

    #[test]
    fn impute_and_exact_differ() {
        let s = sample_set(3, 9, 5);
        let a = MtgpModel::new(s.clone(), params(3), InferenceMode::Exact).unwrap();
        let b = MtgpModel::new(s, params(3), InferenceMode::Impute).unwrap();
        assert_ne!(a.predict(&pt(0.0, 0.0), 1), b.predict(&pt(0.0, 0.0), 1));
    }

    proptest::proptest! {
        #![proptest_config(proptest::test_runner::Config::with_cases(64))]
        #[test]
        fn variance_is_nonnegative_and_bounded_by_the_prior(
            seed in 0u64..1000,
            n in 1usize..20,
            x0 in -3.0f64..3.0,
            x1 in -3.0f64..3.0,
        ) {
            let p = params(3);
            let prior: Vec<f64> = (0..3).map(|t| p.task_covariance()[t][t]).collect();
            for mode in [InferenceMode::Exact, InferenceMode::Impute] {
                let m = MtgpModel::new(sample_set(3, n, seed), p.clone(), mode).unwrap();
                for (t, &k) in prior.iter().enumerate() {
                    let (_, v) = m.predict(&pt(x0, x1), t);
                    proptest::prop_assert!(v >= 0.0 && v <= k * (1.0 + 1e-9));
                }
            }
        }
    }
}
