use super::{matern52, matern52_r, Design, GpError, MtgpHyperparams, Observation, ObservationSet, SearchPoint};
use crate::linalg::{Cholesky, Matrix};

/// Jitter is this fraction of the mean prior variance `mean_t(K^t_tt + σ_t²)`.
pub const JITTER_SCALE: f64 = 1e-8;
/// Extra attempts, each with ten times the jitter, before giving up.
pub const JITTER_ESCALATIONS: u32 = 3;

/// Rows of the joint covariance: one per (point, task) response.
#[derive(Clone, Debug, PartialEq)]
pub(crate) struct Entries {
    pub points: Vec<SearchPoint>,
    pub point_idx: Vec<usize>,
    pub task: Vec<usize>,
    pub y: Vec<f64>,
    pub imputed: Vec<bool>,
}

impl Entries {
    fn empty() -> Self {
        Self { points: Vec::new(), point_idx: Vec::new(), task: Vec::new(), y: Vec::new(), imputed: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    fn point_index(&mut self, p: &SearchPoint) -> (usize, bool) {
        match self.points.iter().position(|q| q.coords == p.coords) {
            Some(k) => (k, false),
            None => {
                self.points.push(*p);
                (self.points.len() - 1, true)
            }
        }
    }

    fn push(&mut self, pidx: usize, task: usize, y: f64, imputed: bool) {
        self.point_idx.push(pidx);
        self.task.push(task);
        self.y.push(y);
        self.imputed.push(imputed);
    }

    /// Real observations only, in set order.
    pub fn exact(set: &ObservationSet) -> Self {
        let mut e = Self::empty();
        for o in set.observations() {
            e.add_exact(o);
        }
        e
    }

    pub fn add_exact(&mut self, o: &Observation) {
        let (k, _) = self.point_index(&o.point);
        self.push(k, o.task, o.y, false);
    }

    /// Block completion: each distinct point contributes `M` consecutive rows
    /// (tasks in order); unobserved ones hold the task's prior mean.
    pub fn completed(set: &ObservationSet, mu: &[f64]) -> Self {
        let mut e = Self::empty();
        for o in set.observations() {
            e.add_completed(o, mu);
        }
        e
    }

    /// Returns the number of rows appended (0 when an imputed row was filled).
    pub fn add_completed(&mut self, o: &Observation, mu: &[f64]) -> usize {
        let m = mu.len();
        let (k, fresh) = self.point_index(&o.point);
        if fresh {
            for (t, &mean) in mu.iter().enumerate() {
                self.push(k, t, mean, true);
            }
        }
        let row = k * m + o.task;
        self.y[row] = o.y;
        self.imputed[row] = o.imputed;
        if fresh {
            m
        } else {
            0
        }
    }

    pub fn residuals(&self, mu: &[f64]) -> Vec<f64> {
        self.y.iter().zip(&self.task).map(|(y, &t)| y - mu[t]).collect()
    }
}

/// Matérn matrix over distinct points (symmetric by construction).
pub(crate) fn point_kernel(points: &[SearchPoint], ls: f64) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut k = vec![vec![1.0; n]; n];
    for i in 0..n {
        for j in 0..i {
            let v = matern52(&points[i], &points[j], ls);
            k[i][j] = v;
            k[j][i] = v;
        }
    }
    k
}

/// `∂k/∂ ln σ_l = (s²/3)(1 + s)e^{−s}`, `s = √5 r / σ_l`.
fn point_kernel_dlog_ls(points: &[SearchPoint], ls: f64) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut k = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..i {
            let s = 5f64.sqrt() * points[i].distance(&points[j]) / ls;
            let v = s * s / 3.0 * (1.0 + s) * (-s).exp();
            k[i][j] = v;
            k[j][i] = v;
        }
    }
    k
}

/// Covariance row `a` against rows `0..=a` (no jitter).
pub(crate) fn covariance_row(
    e: &Entries,
    a: usize,
    kt: &[Vec<f64>],
    kxp: &[Vec<f64>],
    p: &MtgpHyperparams,
) -> Vec<f64> {
    let (ta, pa) = (e.task[a], e.point_idx[a]);
    let mut row: Vec<f64> = (0..=a).map(|b| kt[ta][e.task[b]] * kxp[pa][e.point_idx[b]]).collect();
    row[a] += p.noise_var(ta);
    row
}

pub(crate) fn assemble(e: &Entries, kt: &[Vec<f64>], kxp: &[Vec<f64>], p: &MtgpHyperparams) -> Matrix {
    let n = e.len();
    let mut m = Matrix::zeros(n);
    for a in 0..n {
        for (b, v) in covariance_row(e, a, kt, kxp, p).into_iter().enumerate() {
            m.set(a, b, v);
            m.set(b, a, v);
        }
    }
    m
}

pub fn base_jitter(p: &MtgpHyperparams) -> f64 {
    let kt = p.task_covariance();
    let m = p.num_tasks();
    JITTER_SCALE * (0..m).map(|t| kt[t][t] + p.noise_var(t)).sum::<f64>() / m as f64
}

/// Factors `cov + jitter·I`, escalating the jitter tenfold on failure.
pub(crate) fn factor_with_jitter(cov: &Matrix, base: f64) -> Result<(Cholesky, f64), GpError> {
    let mut jitter = base;
    for attempt in 0..=JITTER_ESCALATIONS {
        if attempt > 0 {
            jitter *= 10.0;
        }
        let mut a = cov.clone();
        a.add_to_diagonal(jitter);
        if let Some(c) = Cholesky::factor(&a) {
            return Ok((c, jitter));
        }
    }
    Err(GpError::FactorizationFailure { jitter })
}

/// `Σ0` entry by entry from the cross-task kernel, in observation order.
pub fn entrywise_covariance(train: &ObservationSet, p: &MtgpHyperparams) -> Matrix {
    let obs = train.observations();
    let kt = p.task_covariance();
    let ls = p.length_scale();
    Matrix::from_fn(obs.len(), |a, b| {
        let (oa, ob) = (&obs[a], &obs[b]);
        let mut v = kt[oa.task][ob.task] * matern52(&oa.point, &ob.point, ls);
        if a == b {
            v += p.noise_var(oa.task);
        }
        v
    })
}

/// `K^t ⊗ K^x(X, X) + D ⊗ I_N` for a block design, permuted into
/// observation order.
pub fn kronecker_covariance(train: &ObservationSet, p: &MtgpHyperparams) -> Result<Matrix, GpError> {
    if train.design() != Design::Block {
        return Err(GpError::NotBlockDesign);
    }
    let m = train.num_tasks();
    let (points, pidx) = train.distinct_points();
    let nx = points.len();
    let kt = p.task_covariance();
    let kx = point_kernel(&points, p.length_scale());
    let big = Matrix::from_fn(m * nx, |r, c| {
        let (t, i) = (r / nx, r % nx);
        let (s, j) = (c / nx, c % nx);
        let mut v = kt[t][s] * kx[i][j];
        if r == c {
            v += p.noise_var(t);
        }
        v
    });
    let obs = train.observations();
    let pos: Vec<usize> = obs.iter().zip(&pidx).map(|(o, &k)| o.task * nx + k).collect();
    Ok(Matrix::from_fn(obs.len(), |a, b| big.get(pos[a], pos[b])))
}

/// `Σ0` plus the jitter that makes it factorizable (Kronecker assembly for
/// block designs, entrywise otherwise).
pub fn joint_covariance(train: &ObservationSet, p: &MtgpHyperparams) -> Result<Matrix, GpError> {
    p.check(train.num_tasks())?;
    let mut cov = match train.design() {
        Design::Block => kronecker_covariance(train, p)?,
        Design::Irregular => entrywise_covariance(train, p),
    };
    let (_, jitter) = factor_with_jitter(&cov, base_jitter(p))?;
    cov.add_to_diagonal(jitter);
    Ok(cov)
}

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// LML of the given rows and, optionally, its gradient in the layout of
/// [`MtgpHyperparams::to_vec`].
pub(crate) fn lml_core(e: &Entries, p: &MtgpHyperparams, want_grad: bool) -> Result<(f64, Option<Vec<f64>>), GpError> {
    let m = p.num_tasks();
    let n = e.len();
    if n == 0 {
        return Err(GpError::Empty);
    }
    let kt = p.task_covariance();
    let ls = p.length_scale();
    let kxp = point_kernel(&e.points, ls);
    let cov = assemble(e, &kt, &kxp, p);
    let base = base_jitter(p);
    let (chol, jitter) = factor_with_jitter(&cov, base)?;
    let r = e.residuals(&p.mu);
    let alpha = chol.solve(&r);
    let fit: f64 = r.iter().zip(&alpha).map(|(a, b)| a * b).sum();
    let lml = -0.5 * fit - 0.5 * chol.log_det() - 0.5 * n as f64 * LN_2PI;
    if !lml.is_finite() {
        return Err(GpError::FactorizationFailure { jitter });
    }
    if !want_grad {
        return Ok((lml, None));
    }

    let inv = chol.inverse();
    let dkx = point_kernel_dlog_ls(&e.points, ls);
    let mut s = vec![vec![0.0; m]; m];
    let mut d_ls = 0.0;
    let mut w_diag = vec![0.0; m];
    for a in 0..n {
        let (ta, pa) = (e.task[a], e.point_idx[a]);
        let inv_row = inv.row(a);
        let (s_row, kt_row, kx_row, dkx_row) = (&mut s[ta], &kt[ta], &kxp[pa], &dkx[pa]);
        for b in 0..n {
            let (tb, pb) = (e.task[b], e.point_idx[b]);
            let w = alpha[a] * alpha[b] - inv_row[b];
            s_row[tb] += w * kx_row[pb];
            d_ls += w * kt_row[tb] * dkx_row[pb];
        }
        w_diag[ta] += alpha[a] * alpha[a] - inv_row[a];
    }
    let tr_w: f64 = w_diag.iter().sum();
    // jitter = f · mean_t(K^t_tt + σ_t²); dLML/djitter = ½ tr W
    let f = jitter / base * JITTER_SCALE;
    let d_jit = 0.5 * tr_w * f / m as f64;

    let mut grad = Vec::with_capacity(MtgpHyperparams::num_params(m));
    for t in 0..m {
        grad.push((0..n).filter(|&a| e.task[a] == t).map(|a| alpha[a]).sum::<f64>());
    }
    for i in 0..m {
        for j in 0..=i {
            let sl: f64 = (0..m).map(|k| s[i][k] * p.lt[k][j]).sum();
            let g = sl + d_jit * 2.0 * p.lt[i][j];
            grad.push(if i == j { g * p.lt[i][i] } else { g });
        }
    }
    grad.push(0.5 * d_ls);
    for t in 0..m {
        let v = p.noise_var(t);
        grad.push(v * w_diag[t] + d_jit * 2.0 * v);
    }
    Ok((lml, Some(grad)))
}

pub fn log_marginal_likelihood(train: &ObservationSet, p: &MtgpHyperparams) -> Result<f64, GpError> {
    p.check(train.num_tasks())?;
    lml_core(&Entries::exact(train), p, false).map(|(l, _)| l)
}

pub fn lml_with_gradient(train: &ObservationSet, p: &MtgpHyperparams) -> Result<(f64, Vec<f64>), GpError> {
    p.check(train.num_tasks())?;
    let (l, g) = lml_core(&Entries::exact(train), p, true)?;
    Ok((l, g.expect("gradient requested")))
}

/// Matérn values between `x` and each point.
#[inline]
pub(crate) fn kx_to_points(x: &SearchPoint, points: &[SearchPoint], ls: f64) -> Vec<f64> {
    points.iter().map(|q| matern52_r(x.distance(q), ls)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from;
    use rand::Rng;

    fn random_params(m: usize, rng: &mut impl Rng) -> MtgpHyperparams {
        let mut p = MtgpHyperparams::isotropic(m, 0.0, 1.0, 1.0, 0.1);
        for i in 0..m {
            p.mu[i] = rng.gen_range(-1.0..1.0);
            p.log_noise[i] = rng.gen_range(-3.0..-0.5);
            for j in 0..=i {
                p.lt[i][j] = if i == j { rng.gen_range(0.3..1.5) } else { rng.gen_range(-0.8..0.8) };
            }
        }
        p.log_length_scale = rng.gen_range(-0.5..1.2f64);
        p
    }

    fn block_set(m: usize, n: usize, rng: &mut impl Rng) -> ObservationSet {
        let mut s = ObservationSet::new(m);
        for _ in 0..n {
            let x = SearchPoint::new(rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0)).unwrap();
            for t in 0..m {
                s.push(Observation::new(x, t, rng.gen_range(-2.0..2.0))).unwrap();
            }
        }
        s
    }

    #[test]
    fn one_point_one_task() {
        let mut s = ObservationSet::new(1);
        s.push(Observation::new(SearchPoint::origin(), 0, 0.3)).unwrap();
        let p = MtgpHyperparams::isotropic(1, 0.3, 1.0, 1.0, 0.1f64.sqrt());
        let c = joint_covariance(&s, &p).unwrap();
        let jitter = base_jitter(&p);
        assert!((c.get(0, 0) - (1.1 + jitter)).abs() < 1e-15);
        let v = 1.1 + jitter;
        let l = log_marginal_likelihood(&s, &p).unwrap();
        assert!((l + 0.5 * (2.0 * std::f64::consts::PI * v).ln()).abs() < 1e-12);
    }

    #[test]
    fn kronecker_equals_entrywise() {
        let mut rng = rng_from(3, &[]);
        for m in 1..=3 {
            let s = block_set(m, 4, &mut rng);
            let p = random_params(m, &mut rng);
            assert_eq!(kronecker_covariance(&s, &p).unwrap(), entrywise_covariance(&s, &p));
        }
    }

    #[test]
    fn kronecker_matches_explicit_product() {
        let mut rng = rng_from(4, &[]);
        let mut s = ObservationSet::new(2);
        let xs = [SearchPoint::new(0.0, 0.0).unwrap(), SearchPoint::new(1.0, -0.5).unwrap()];
        for t in 0..2 {
            for x in xs {
                s.push(Observation::new(x, t, rng.gen_range(-1.0..1.0))).unwrap();
            }
        }
        let p = random_params(2, &mut rng);
        let kt = p.task_covariance();
        let kx = [[1.0, matern52(&xs[0], &xs[1], p.length_scale())], [0.0, 1.0]];
        let kxs = |i: usize, j: usize| if i == j { 1.0 } else { kx[0][1] };
        let c = kronecker_covariance(&s, &p).unwrap();
        for r in 0..4 {
            for q in 0..4 {
                let mut v = kt[r / 2][q / 2] * kxs(r % 2, q % 2);
                if r == q {
                    v += p.noise_var(r / 2);
                }
                assert!((c.get(r, q) - v).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn noise_increase_lowers_lml_at_zero_residual() {
        let mut rng = rng_from(5, &[]);
        let mut s = block_set(2, 5, &mut rng);
        let mut p = random_params(2, &mut rng);
        let obs: Vec<Observation> =
            s.observations().iter().map(|o| Observation::new(o.point, o.task, p.mu[o.task])).collect();
        s = ObservationSet::from_observations(2, obs).unwrap();
        let a = log_marginal_likelihood(&s, &p).unwrap();
        for v in &mut p.log_noise {
            *v += 0.5 * 2f64.ln();
        }
        assert!(log_marginal_likelihood(&s, &p).unwrap() < a);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = rng_from(6, &[]);
        for trial in 0..5 {
            let m = 1 + trial % 3;
            let mut s = block_set(m, 5, &mut rng);
            s.push(Observation::new(SearchPoint::new(2.5, 2.5).unwrap(), 0, 0.7)).unwrap();
            let p = random_params(m, &mut rng);
            let (_, g) = lml_with_gradient(&s, &p).unwrap();
            let x = p.to_vec();
            for k in 0..x.len() {
                let h = 1e-5;
                let (mut xp, mut xm) = (x.clone(), x.clone());
                xp[k] += h;
                xm[k] -= h;
                let fp = log_marginal_likelihood(&s, &MtgpHyperparams::from_vec(m, &xp)).unwrap();
                let fm = log_marginal_likelihood(&s, &MtgpHyperparams::from_vec(m, &xm)).unwrap();
                let fd = (fp - fm) / (2.0 * h);
                assert!((fd - g[k]).abs() <= 1e-4 * fd.abs().max(g[k].abs()).max(1.0), "param {k}: {fd} vs {}", g[k]);
            }
        }
    }

    #[test]
    fn completion_fills_gaps_with_prior_means() {
        let mut s = ObservationSet::new(3);
        let x = SearchPoint::new(0.5, 0.5).unwrap();
        s.push(Observation::new(x, 1, 4.0)).unwrap();
        let e = Entries::completed(&s, &[7.0, 8.0, 9.0]);
        assert_eq!(e.y, vec![7.0, 4.0, 9.0]);
        assert_eq!(e.imputed, vec![true, false, true]);
    }
}
