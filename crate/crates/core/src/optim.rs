//! Box-constrained quasi-Newton minimization (projected BFGS with an Armijo
//! backtracking line search). Used to fit GP hyperparameters.

#[derive(Clone, Debug)]
pub struct Bounds {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Bounds {
    pub fn project(&self, x: &mut [f64]) {
        for ((xi, lo), hi) in x.iter_mut().zip(&self.lower).zip(&self.upper) {
            *xi = xi.clamp(*lo, *hi);
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct BfgsOptions {
    pub max_iter: usize,
    /// Stop when the projected gradient's infinity norm falls below this.
    pub grad_tol: f64,
    /// Stop when the relative decrease of the objective falls below this.
    pub f_tol: f64,
}

impl Default for BfgsOptions {
    fn default() -> Self {
        Self { max_iter: 200, grad_tol: 1e-6, f_tol: 1e-10 }
    }
}

#[derive(Clone, Debug)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub f: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Minimizes `f` inside `bounds`. The objective returns `None` where it is
/// undefined (e.g. a failed factorization); such points are treated as +∞.
/// Returns `None` only if the starting point itself is undefined.
pub fn minimize<F>(mut f: F, x0: &[f64], bounds: &Bounds, opts: BfgsOptions) -> Option<Minimum>
where
    F: FnMut(&[f64]) -> Option<(f64, Vec<f64>)>,
{
    let n = x0.len();
    let mut x = x0.to_vec();
    bounds.project(&mut x);
    let (mut fx, mut g) = f(&x).filter(|(v, _)| v.is_finite())?;
    let mut h = identity(n);
    let mut fresh = true;
    let mut converged = false;
    let mut iterations = 0;

    while iterations < opts.max_iter {
        iterations += 1;
        let free: Vec<bool> = (0..n)
            .map(|i| !((x[i] <= bounds.lower[i] && g[i] > 0.0) || (x[i] >= bounds.upper[i] && g[i] < 0.0)))
            .collect();
        let pg_norm = (0..n).filter(|&i| free[i]).map(|i| g[i].abs()).fold(0.0, f64::max);
        if pg_norm < opts.grad_tol {
            converged = true;
            break;
        }

        let mut d = direction(&h, &g, &free);
        if !(dot(&d, &g) < 0.0) {
            h = identity(n);
            fresh = true;
            d = direction(&h, &g, &free);
        }
        let dmax = d.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        let mut t = if fresh { (1.0 / dmax).min(1.0) } else { 1.0 };

        let mut accepted = None;
        for _ in 0..40 {
            let mut xn: Vec<f64> = x.iter().zip(&d).map(|(xi, di)| xi + t * di).collect();
            bounds.project(&mut xn);
            let decrease: f64 = g.iter().zip(xn.iter().zip(&x)).map(|(gi, (a, b))| gi * (a - b)).sum();
            if let Some((fn_, gn)) = f(&xn) {
                if fn_.is_finite() && fn_ <= fx + 1e-4 * decrease {
                    accepted = Some((xn, fn_, gn));
                    break;
                }
            }
            t *= 0.5;
        }

        let Some((xn, fn_, gn)) = accepted else {
            if fresh {
                break;
            }
            h = identity(n);
            fresh = true;
            continue;
        };

        let s: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = gn.iter().zip(&g).map(|(a, b)| a - b).collect();
        let rel_change = (fx - fn_).abs() / (1.0 + fx.abs());
        x = xn;
        g = gn;
        let prev = fx;
        fx = fn_;

        let sy: f64 = s.iter().zip(&y).map(|(a, b)| a * b).sum();
        if sy > 1e-12 * norm(&s) * norm(&y) && sy > 0.0 {
            if fresh {
                let yy: f64 = y.iter().map(|v| v * v).sum();
                let scale = sy / yy;
                for i in 0..n {
                    h[i][i] = scale;
                }
            }
            bfgs_update(&mut h, &s, &y, sy);
            fresh = false;
        }
        if rel_change < opts.f_tol && prev >= fx {
            converged = true;
            break;
        }
    }
    Some(Minimum { x, f: fx, iterations, converged })
}

fn identity(n: usize) -> Vec<Vec<f64>> {
    (0..n).map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn direction(h: &[Vec<f64>], g: &[f64], free: &[bool]) -> Vec<f64> {
    let n = g.len();
    (0..n)
        .map(|i| {
            if !free[i] {
                return 0.0;
            }
            -(0..n).filter(|&j| free[j]).map(|j| h[i][j] * g[j]).sum::<f64>()
        })
        .collect()
}

// H ← (I − ρ s yᵀ) H (I − ρ y sᵀ) + ρ s sᵀ
fn bfgs_update(h: &mut [Vec<f64>], s: &[f64], y: &[f64], sy: f64) {
    let n = s.len();
    let rho = 1.0 / sy;
    let hy: Vec<f64> = (0..n).map(|i| (0..n).map(|j| h[i][j] * y[j]).sum()).collect();
    let yhy: f64 = y.iter().zip(&hy).map(|(a, b)| a * b).sum();
    for i in 0..n {
        for j in 0..n {
            h[i][j] += -rho * (hy[i] * s[j] + s[i] * hy[j]) + (rho * rho * yhy + rho) * s[i] * s[j];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rosenbrock(x: &[f64]) -> Option<(f64, Vec<f64>)> {
        let (a, b) = (x[0], x[1]);
        let f = (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2);
        let g = vec![-2.0 * (1.0 - a) - 400.0 * a * (b - a * a), 200.0 * (b - a * a)];
        Some((f, g))
    }

    #[test]
    fn finds_rosenbrock_minimum() {
        let bounds = Bounds { lower: vec![-5.0; 2], upper: vec![5.0; 2] };
        let opts = BfgsOptions { max_iter: 500, grad_tol: 1e-8, f_tol: 0.0 };
        let m = minimize(rosenbrock, &[-1.2, 1.0], &bounds, opts).unwrap();
        assert!((m.x[0] - 1.0).abs() < 1e-5 && (m.x[1] - 1.0).abs() < 1e-5, "{:?}", m);
    }

    #[test]
    fn respects_active_bounds() {
        let bounds = Bounds { lower: vec![2.0, -5.0], upper: vec![5.0, 5.0] };
        let quad = |x: &[f64]| {
            Some(((x[0] - 1.0).powi(2) + (x[1] + 1.0).powi(2), vec![2.0 * (x[0] - 1.0), 2.0 * (x[1] + 1.0)]))
        };
        let m = minimize(quad, &[4.0, 4.0], &bounds, BfgsOptions::default()).unwrap();
        assert_eq!(m.x[0], 2.0);
        assert!((m.x[1] + 1.0).abs() < 1e-6);
    }

    #[test]
    fn undefined_start_is_none() {
        let bounds = Bounds { lower: vec![-1.0], upper: vec![1.0] };
        assert!(minimize(|_: &[f64]| None, &[0.0], &bounds, BfgsOptions::default()).is_none());
    }
}
