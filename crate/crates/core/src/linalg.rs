//! Small dense linear algebra used by the Gaussian process.
//!
//! Matrices are square and stored row-major. The Cholesky factor is built
//! row by row (Cholesky–Banachiewicz) so that appending an observation with
//! [`Cholesky::extend`] performs exactly the arithmetic a full refactorization
//! would perform for the new row.

#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    n: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(n: usize) -> Self {
        Self { n, data: vec![0.0; n * n] }
    }

    pub fn from_fn(n: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                data.push(f(i, j));
            }
        }
        Self { n, data }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.n + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, i)).collect()
    }

    pub fn add_to_diagonal(&mut self, v: f64) {
        for i in 0..self.n {
            self.data[i * self.n + i] += v;
        }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Lower-triangular Cholesky factor `A = L Lᵀ`, packed by rows.
#[derive(Clone, Debug)]
pub struct Cholesky {
    n: usize,
    // row i lives at packed[offset(i)..offset(i) + i + 1]
    packed: Vec<f64>,
}

#[inline]
fn offset(i: usize) -> usize {
    i * (i + 1) / 2
}

impl Cholesky {
    /// Factors a symmetric matrix; `None` if a pivot is not strictly positive.
    pub fn factor(a: &Matrix) -> Option<Self> {
        let mut chol = Cholesky { n: 0, packed: Vec::with_capacity(offset(a.dim() + 1)) };
        for i in 0..a.dim() {
            if !chol.push_row(&a.row(i)[..=i]) {
                return None;
            }
        }
        Some(chol)
    }

    /// Appends one row/column. `row` holds `A[n, 0..=n]` (last entry is the
    /// new diagonal). Returns false, leaving the factor untouched, if the
    /// extended matrix is not positive definite.
    pub fn extend(&mut self, row: &[f64]) -> bool {
        assert_eq!(row.len(), self.n + 1);
        self.push_row(row)
    }

    fn push_row(&mut self, a_row: &[f64]) -> bool {
        let i = self.n;
        let start = self.packed.len();
        self.packed.extend_from_slice(a_row);
        let (head, tail) = self.packed.split_at_mut(start);
        for j in 0..i {
            let lj = &head[offset(j)..offset(j) + j + 1];
            let s = tail[j] - dot(&tail[..j], &lj[..j]);
            tail[j] = s / lj[j];
        }
        let li = &self.packed[start..start + i];
        let d = self.packed[start + i] - dot(li, li);
        if !(d > 0.0) || !d.is_finite() {
            self.packed.truncate(start);
            return false;
        }
        self.packed[start + i] = d.sqrt();
        self.n += 1;
        true
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    #[inline]
    fn row(&self, i: usize) -> &[f64] {
        &self.packed[offset(i)..offset(i) + i + 1]
    }

    /// Solves `L x = b`.
    pub fn solve_lower(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.solve_lower_in_place(&mut x);
        x
    }

    pub fn solve_lower_in_place(&self, x: &mut [f64]) {
        for i in 0..self.n {
            let r = self.row(i);
            let s = x[i] - dot(&r[..i], &x[..i]);
            x[i] = s / r[i];
        }
    }

    /// Solves `Lᵀ x = b`.
    pub fn solve_upper_in_place(&self, x: &mut [f64]) {
        for i in (0..self.n).rev() {
            x[i] /= self.row(i)[i];
            let xi = x[i];
            let r = self.row(i);
            for (xk, lik) in x[..i].iter_mut().zip(&r[..i]) {
                *xk -= lik * xi;
            }
        }
    }

    /// Solves `A x = b`.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.solve_lower_in_place(&mut x);
        self.solve_upper_in_place(&mut x);
        x
    }

    /// `L x`.
    pub fn mul_lower(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n).map(|i| dot(self.row(i), &x[..=i])).collect()
    }

    pub fn log_det(&self) -> f64 {
        2.0 * (0..self.n).map(|i| self.row(i)[i].ln()).sum::<f64>()
    }

    /// Dense `A⁻¹` via `L⁻¹`.
    pub fn inverse(&self) -> Matrix {
        let n = self.n;
        // cols[j] is column j of L⁻¹ (zero above the diagonal)
        let mut cols = vec![vec![0.0; n]; n];
        for (j, x) in cols.iter_mut().enumerate() {
            x[j] = 1.0 / self.row(j)[j];
            for i in j + 1..n {
                let r = self.row(i);
                let s = -dot(&r[j..i], &x[j..i]);
                x[i] = s / r[i];
            }
        }
        // A⁻¹ = L⁻ᵀ L⁻¹, so (A⁻¹)[a][b] = Σ_{k ≥ a} L⁻¹[k][a] L⁻¹[k][b] for a ≥ b
        let mut inv = Matrix::zeros(n);
        for a in 0..n {
            for b in 0..=a {
                let s = dot(&cols[a][a..], &cols[b][a..]);
                inv.set(a, b, s);
                inv.set(b, a, s);
            }
        }
        inv
    }
}
