use super::{Dataset, SvmError, SvmHyperparams};

/// Convergence tolerance on the maximal KKT violation `m(α) − M(α)`: a
/// solution is accepted once the violation is below it.
pub const KKT_TOL: f64 = 1e-3;

/// The solver keeps iterating down to this violation while the kernel budget
/// lasts; stopping at [`KKT_TOL`] can leave the dual objective ~1e-4 off.
pub const TARGET_TOL: f64 = 1e-6;

/// Kernel evaluation budget per training problem; one SMO iteration touches
/// two kernel columns.
const KERNEL_EVAL_BUDGET: usize = 1_000_000;

const TAU: f64 = 1e-12;

/// Solution of `min ½αᵀQα − eᵀα` s.t. `0 ≤ α ≤ C`, `yᵀα = 0`, with
/// `Q_ij = y_i y_j K_ij`.
#[derive(Clone, Debug)]
pub struct DualSolution {
    pub alpha: Vec<f64>,
    /// Gradient `Qα − e` at the solution.
    pub gradient: Vec<f64>,
    /// Offset; the decision function is `Σ α_i y_i K(x_i, x) − rho`.
    pub rho: f64,
    pub iterations: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SvmModel {
    /// `α_i y_i` for each support vector.
    pub support_coeffs: Vec<f64>,
    pub support_points: Vec<Vec<f64>>,
    pub bias: f64,
    pub gamma: f64,
}

impl SvmModel {
    pub fn decision(&self, x: &[f64]) -> f64 {
        self.support_coeffs.iter().zip(&self.support_points).map(|(a, s)| a * rbf(s, x, self.gamma)).sum::<f64>()
            + self.bias
    }

    /// Sign of the decision function; exact zero maps to +1.
    pub fn predict(&self, x: &[f64]) -> i8 {
        if self.decision(x) >= 0.0 {
            1
        } else {
            -1
        }
    }
}

pub fn predict(model: &SvmModel, x: &[f64]) -> i8 {
    model.predict(x)
}

#[inline]
pub(crate) fn rbf(a: &[f64], b: &[f64], gamma: f64) -> f64 {
    let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    (-gamma * d2).exp()
}

pub(crate) fn kernel_matrix(rows: &[Vec<f64>], gamma: f64) -> Vec<f64> {
    let n = rows.len();
    let mut k = vec![0.0; n * n];
    for i in 0..n {
        k[i * n + i] = 1.0;
        for j in 0..i {
            let v = rbf(&rows[i], &rows[j], gamma);
            k[i * n + j] = v;
            k[j * n + i] = v;
        }
    }
    k
}

/// `½αᵀQα − eᵀα`.
pub fn dual_objective(kernel: &[f64], y: &[f64], alpha: &[f64]) -> f64 {
    let n = y.len();
    let mut quad = 0.0;
    for i in 0..n {
        for j in 0..n {
            quad += alpha[i] * alpha[j] * y[i] * y[j] * kernel[i * n + j];
        }
    }
    0.5 * quad - alpha.iter().sum::<f64>()
}

fn gradient(kernel: &[f64], y: &[f64], alpha: &[f64]) -> Vec<f64> {
    let n = y.len();
    (0..n).map(|i| (0..n).map(|j| y[i] * y[j] * kernel[i * n + j] * alpha[j]).sum::<f64>() - 1.0).collect()
}

fn in_up(a: f64, y: f64, c: f64) -> bool {
    (y > 0.0 && a < c) || (y < 0.0 && a > 0.0)
}

fn in_low(a: f64, y: f64, c: f64) -> bool {
    (y > 0.0 && a > 0.0) || (y < 0.0 && a < c)
}

/// Maximal violating pair `(i, j, m − M)`.
fn select_pair(y: &[f64], alpha: &[f64], g: &[f64], c: f64) -> Option<(usize, usize, f64)> {
    let (mut gmax, mut imax) = (f64::NEG_INFINITY, None);
    let (mut gmin, mut jmin) = (f64::INFINITY, None);
    for t in 0..y.len() {
        let v = -y[t] * g[t];
        if in_up(alpha[t], y[t], c) && v > gmax {
            gmax = v;
            imax = Some(t);
        }
        if in_low(alpha[t], y[t], c) && v < gmin {
            gmin = v;
            jmin = Some(t);
        }
    }
    Some((imax?, jmin?, gmax - gmin))
}

/// KKT violation `m(α) − M(α)` recomputed from scratch.
pub fn max_kkt_violation(kernel: &[f64], y: &[f64], alpha: &[f64], c: f64) -> f64 {
    let g = gradient(kernel, y, alpha);
    select_pair(y, alpha, &g, c).map_or(0.0, |(_, _, v)| v.max(0.0))
}

/// SMO with maximal-violating-pair working set selection.
pub fn solve_dual(kernel: &[f64], y: &[f64], c: f64) -> Result<DualSolution, SvmError> {
    let n = y.len();
    assert_eq!(kernel.len(), n * n);
    let max_iter = (KERNEL_EVAL_BUDGET / (2 * n.max(1))).max(1);
    let mut alpha = vec![0.0; n];
    let mut g = vec![-1.0; n];
    let q = |i: usize, j: usize| y[i] * y[j] * kernel[i * n + j];

    let mut iter = 0;
    loop {
        let Some((i, j, viol)) = select_pair(y, &alpha, &g, c) else { break };
        if viol < TARGET_TOL || (iter >= max_iter && viol < KKT_TOL) {
            break;
        }
        if iter >= max_iter {
            return Err(SvmError::NonConvergence { iterations: iter, violation: viol });
        }
        iter += 1;

        let (old_i, old_j) = (alpha[i], alpha[j]);
        if y[i] != y[j] {
            let mut quad = q(i, i) + q(j, j) + 2.0 * q(i, j);
            if quad <= 0.0 {
                quad = TAU;
            }
            let delta = (-g[i] - g[j]) / quad;
            let diff = alpha[i] - alpha[j];
            alpha[i] += delta;
            alpha[j] += delta;
            if diff > 0.0 {
                if alpha[j] < 0.0 {
                    alpha[j] = 0.0;
                    alpha[i] = diff;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = -diff;
            }
            if diff > 0.0 {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = c - diff;
                }
            } else if alpha[j] > c {
                alpha[j] = c;
                alpha[i] = c + diff;
            }
        } else {
            let mut quad = q(i, i) + q(j, j) - 2.0 * q(i, j);
            if quad <= 0.0 {
                quad = TAU;
            }
            let delta = (g[i] - g[j]) / quad;
            let sum = alpha[i] + alpha[j];
            alpha[i] -= delta;
            alpha[j] += delta;
            if sum > c {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = sum - c;
                }
            } else if alpha[j] < 0.0 {
                alpha[j] = 0.0;
                alpha[i] = sum;
            }
            if sum > c {
                if alpha[j] > c {
                    alpha[j] = c;
                    alpha[i] = sum - c;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = sum;
            }
        }

        let (di, dj) = (alpha[i] - old_i, alpha[j] - old_j);
        for t in 0..n {
            g[t] += q(i, t) * di + q(j, t) * dj;
        }
    }

    let rho = compute_rho(y, &alpha, &g, c);
    Ok(DualSolution { alpha, gradient: g, rho, iterations: iter })
}

fn compute_rho(y: &[f64], alpha: &[f64], g: &[f64], c: f64) -> f64 {
    let (mut ub, mut lb) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut free, mut sum_free) = (0usize, 0.0);
    for t in 0..y.len() {
        let yg = y[t] * g[t];
        if alpha[t] >= c {
            if y[t] < 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else if alpha[t] <= 0.0 {
            if y[t] > 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else {
            free += 1;
            sum_free += yg;
        }
    }
    if free > 0 {
        sum_free / free as f64
    } else {
        (ub + lb) / 2.0
    }
}

/// Trains on the rows as given; callers standardize features beforehand.
pub fn train_svm(data: &Dataset, hp: SvmHyperparams) -> Result<SvmModel, SvmError> {
    if !(data.labels.contains(&1) && data.labels.contains(&-1)) {
        return Err(SvmError::SingleClass);
    }
    let y: Vec<f64> = data.labels.iter().map(|&l| f64::from(l)).collect();
    let k = kernel_matrix(&data.features, hp.gamma);
    let sol = solve_dual(&k, &y, hp.c)?;
    let mut support_coeffs = Vec::new();
    let mut support_points = Vec::new();
    for (t, &a) in sol.alpha.iter().enumerate() {
        if a > 0.0 {
            support_coeffs.push(a * y[t]);
            support_points.push(data.features[t].clone());
        }
    }
    Ok(SvmModel { support_coeffs, support_points, bias: -sol.rho, gamma: hp.gamma })
}
