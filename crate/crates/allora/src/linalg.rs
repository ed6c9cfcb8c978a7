//! Minimal dense linear algebra: row-major `f64` matrices with the handful
//! of operations the rest of the crate needs. Deliberately naive — desk-scale
//! problems do not justify BLAS — but exact about error cases: dimension
//! mismatches and singular systems are rejected, never papered over.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Pivot magnitudes below `PIVOT_REL_TOL * max_abs(entry)` abort elimination.
const PIVOT_REL_TOL: f64 = 1e-12;
/// Relative tolerance of the power-iteration spectral norm estimate.
const POWER_ITER_TOL: f64 = 1e-8;
/// Iteration budget for power iteration before reporting non-convergence.
const POWER_ITER_MAX: usize = 10_000;
/// Sweep budget for the cyclic Jacobi eigensolver.
const JACOBI_MAX_SWEEPS: usize = 100;

/// Dense row-major matrix of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    /// Builds a matrix from row-major data; the length must be `rows * cols`.
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::invalid(format!(
                "matrix data length {} does not match {}x{}",
                data.len(),
                rows,
                cols
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Matrix { rows, cols, data }
    }

    /// Builds a matrix from nested rows; all rows must share one length.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::invalid("matrix must have at least one row"));
        }
        let cols = rows[0].len();
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::invalid("ragged rows in matrix literal"));
        }
        let data = rows.iter().flatten().copied().collect();
        Matrix::new(rows.len(), cols, data)
    }

    /// Seeded matrix with i.i.d. uniform entries on `[lo, hi]`.
    pub fn random_uniform(rows: usize, cols: usize, lo: f64, hi: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Matrix::from_fn(rows, cols, |_, _| rng.random_range(lo..=hi))
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        debug_assert!(i < self.rows && j < self.cols);
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        debug_assert!(i < self.rows && j < self.cols);
        self.data[i * self.cols + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        out
    }

    /// Standard matrix product; errors with both shapes on mismatch.
    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::DimMismatch {
                op: "matmul",
                lhs: self.shape(),
                rhs: other.shape(),
            });
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let a_row = &self.data[i * self.cols..(i + 1) * self.cols];
            let o_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for (k, &aik) in a_row.iter().enumerate() {
                if aik == 0.0 {
                    continue;
                }
                let b_row = &other.data[k * other.cols..(k + 1) * other.cols];
                for (o, &bkj) in o_row.iter_mut().zip(b_row) {
                    *o += aik * bkj;
                }
            }
        }
        Ok(out)
    }

    fn zip_with(&self, other: &Matrix, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Matrix> {
        if self.shape() != other.shape() {
            return Err(Error::DimMismatch {
                op,
                lhs: self.shape(),
                rhs: other.shape(),
            });
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| f(a, b))
            .collect();
        Matrix::new(self.rows, self.cols, data)
    }

    pub fn add(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_with(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_with(other, "sub", |a, b| a - b)
    }

    /// Element-wise (Hadamard) product.
    pub fn hadamard(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_with(other, "hadamard", |a, b| a * b)
    }

    pub fn scale(&self, s: f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| v * s).collect(),
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Scales column `j` by `factors[j]`.
    pub fn scale_columns(&self, factors: &[f64]) -> Result<Matrix> {
        if factors.len() != self.cols {
            return Err(Error::DimMismatch {
                op: "scale_columns",
                lhs: self.shape(),
                rhs: (factors.len(), 1),
            });
        }
        Ok(Matrix::from_fn(self.rows, self.cols, |i, j| {
            self.get(i, j) * factors[j]
        }))
    }

    /// Frobenius inner product `sum_ij a_ij * b_ij`.
    pub fn dot(&self, other: &Matrix) -> Result<f64> {
        if self.shape() != other.shape() {
            return Err(Error::DimMismatch {
                op: "dot",
                lhs: self.shape(),
                rhs: other.shape(),
            });
        }
        Ok(self.data.iter().zip(&other.data).map(|(&a, &b)| a * b).sum())
    }

    pub fn frobenius_norm_sq(&self) -> f64 {
        self.data.iter().map(|&v| v * v).sum()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.frobenius_norm_sq().sqrt()
    }

    /// Euclidean norm of each row.
    pub fn row_norms(&self) -> Vec<f64> {
        (0..self.rows)
            .map(|i| self.row(i).iter().map(|&v| v * v).sum::<f64>().sqrt())
            .collect()
    }

    /// Squared Euclidean norm of each column.
    pub fn col_norms_sq(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        for i in 0..self.rows {
            for (j, o) in out.iter_mut().enumerate() {
                let v = self.get(i, j);
                *o += v * v;
            }
        }
        out
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0_f64, |m, &v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Solves `A X = B` for square `A` by Gaussian elimination with partial
/// pivoting. Refuses (rather than regularizes) when a pivot falls below
/// `1e-12` times the largest entry of `A`.
pub fn solve(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.rows != a.cols {
        return Err(Error::invalid(format!(
            "solve requires a square system, got {}x{}",
            a.rows, a.cols
        )));
    }
    if a.rows != b.rows {
        return Err(Error::DimMismatch {
            op: "solve",
            lhs: a.shape(),
            rhs: b.shape(),
        });
    }
    let n = a.rows;
    let m = b.cols;
    let mut lhs = a.clone();
    let mut rhs = b.clone();
    let tol = PIVOT_REL_TOL * a.max_abs();

    for col in 0..n {
        let mut pivot_row = col;
        let mut pivot_val = lhs.get(col, col).abs();
        for r in col + 1..n {
            let v = lhs.get(r, col).abs();
            if v > pivot_val {
                pivot_val = v;
                pivot_row = r;
            }
        }
        if pivot_val <= tol {
            return Err(Error::Singular { op: "solve" });
        }
        if pivot_row != col {
            for j in 0..n {
                let tmp = lhs.get(col, j);
                lhs.set(col, j, lhs.get(pivot_row, j));
                lhs.set(pivot_row, j, tmp);
            }
            for j in 0..m {
                let tmp = rhs.get(col, j);
                rhs.set(col, j, rhs.get(pivot_row, j));
                rhs.set(pivot_row, j, tmp);
            }
        }
        let pivot = lhs.get(col, col);
        for r in col + 1..n {
            let factor = lhs.get(r, col) / pivot;
            if factor == 0.0 {
                continue;
            }
            for j in col..n {
                let v = lhs.get(r, j) - factor * lhs.get(col, j);
                lhs.set(r, j, v);
            }
            for j in 0..m {
                let v = rhs.get(r, j) - factor * rhs.get(col, j);
                rhs.set(r, j, v);
            }
        }
    }

    let mut x = Matrix::zeros(n, m);
    for col in (0..n).rev() {
        for j in 0..m {
            let mut acc = rhs.get(col, j);
            for k in col + 1..n {
                acc -= lhs.get(col, k) * x.get(k, j);
            }
            x.set(col, j, acc / lhs.get(col, col));
        }
    }
    Ok(x)
}

/// Returns the unique minimizer of `|Y - X W|_F^2 + mu |W|_F^2`, i.e. the
/// solution of the regularized normal equations `(X^T X + mu I) W = X^T Y`.
pub fn ridge_solve(x: &Matrix, y: &Matrix, mu: f64) -> Result<Matrix> {
    if x.rows != y.rows {
        return Err(Error::DimMismatch {
            op: "ridge_solve",
            lhs: x.shape(),
            rhs: y.shape(),
        });
    }
    if !(mu >= 0.0) {
        return Err(Error::invalid(format!("ridge_solve: mu must be >= 0, got {mu}")));
    }
    let xt = x.transpose();
    let mut gram = xt.matmul(x)?;
    for i in 0..gram.rows() {
        let v = gram.get(i, i) + mu;
        gram.set(i, i, v);
    }
    let rhs = xt.matmul(y)?;
    solve(&gram, &rhs)
}

/// Spectral norm (largest singular value) by alternating power iteration,
/// relative tolerance `1e-8`, at most `10^4` iterations.
pub fn spectral_norm(m: &Matrix) -> Result<f64> {
    if m.max_abs() == 0.0 {
        return Ok(0.0);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0001);
    let mut v: Vec<f64> = (0..m.cols).map(|_| rng.random_range(-1.0..=1.0)).collect();
    normalize(&mut v);
    let mut sigma_prev = 0.0;
    for iter in 0..POWER_ITER_MAX {
        // u = M v
        let mut u = vec![0.0; m.rows];
        for i in 0..m.rows {
            u[i] = m.row(i).iter().zip(&v).map(|(&a, &b)| a * b).sum();
        }
        let sigma = u.iter().map(|&x| x * x).sum::<f64>().sqrt();
        if sigma == 0.0 {
            // v landed in the null space; restart from a fresh direction.
            v = (0..m.cols).map(|_| rng.random_range(-1.0..=1.0)).collect();
            normalize(&mut v);
            continue;
        }
        for x in u.iter_mut() {
            *x /= sigma;
        }
        // v = M^T u, normalized
        for j in 0..m.cols {
            v[j] = 0.0;
        }
        for i in 0..m.rows {
            let ui = u[i];
            for (j, vj) in v.iter_mut().enumerate() {
                *vj += m.get(i, j) * ui;
            }
        }
        normalize(&mut v);
        if iter > 0 && (sigma - sigma_prev).abs() <= POWER_ITER_TOL * sigma.max(f64::MIN_POSITIVE) {
            return Ok(sigma);
        }
        sigma_prev = sigma;
    }
    Err(Error::NonConvergence {
        op: "spectral_norm",
        iterations: POWER_ITER_MAX,
    })
}

fn normalize(v: &mut [f64]) {
    let n = v.iter().map(|&x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        for x in v.iter_mut() {
            *x /= n;
        }
    }
}

/// Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.
/// Returns eigenvalues and the orthogonal matrix whose columns are the
/// corresponding eigenvectors, so `m = V diag(vals) V^T`.
pub fn jacobi_eigh(m: &Matrix, tol: f64) -> Result<(Vec<f64>, Matrix)> {
    if m.rows != m.cols {
        return Err(Error::invalid(format!(
            "jacobi_eigh requires a square matrix, got {}x{}",
            m.rows, m.cols
        )));
    }
    let n = m.rows;
    let mut a = m.clone();
    let mut v = Matrix::identity(n);

    for _sweep in 0..JACOBI_MAX_SWEEPS {
        let mut off = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    off += a.get(i, j) * a.get(i, j);
                }
            }
        }
        let scale = a.frobenius_norm().max(f64::MIN_POSITIVE);
        if off.sqrt() <= tol * scale {
            let vals = (0..n).map(|i| a.get(i, i)).collect();
            return Ok((vals, v));
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a.get(p, q);
                if apq.abs() <= tol * scale / (n as f64) {
                    continue;
                }
                let app = a.get(p, p);
                let aqq = a.get(q, q);
                let tau = (aqq - app) / (2.0 * apq);
                let t = if tau >= 0.0 {
                    1.0 / (tau + (1.0 + tau * tau).sqrt())
                } else {
                    -1.0 / (-tau + (1.0 + tau * tau).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a.get(k, p);
                    let akq = a.get(k, q);
                    a.set(k, p, c * akp - s * akq);
                    a.set(k, q, s * akp + c * akq);
                }
                for k in 0..n {
                    let apk = a.get(p, k);
                    let aqk = a.get(q, k);
                    a.set(p, k, c * apk - s * aqk);
                    a.set(q, k, s * apk + c * aqk);
                }
                for k in 0..n {
                    let vkp = v.get(k, p);
                    let vkq = v.get(k, q);
                    v.set(k, p, c * vkp - s * vkq);
                    v.set(k, q, s * vkp + c * vkq);
                }
            }
        }
    }
    Err(Error::NonConvergence {
        op: "jacobi_eigh",
        iterations: JACOBI_MAX_SWEEPS,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn approx_rel(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
    }

    /// Independent triple-loop product used as the matmul oracle.
    fn naive_matmul(a: &Matrix, b: &Matrix) -> Matrix {
        let mut out = Matrix::zeros(a.rows(), b.cols());
        for i in 0..a.rows() {
            for j in 0..b.cols() {
                let mut acc = 0.0;
                for k in 0..a.cols() {
                    acc += a.get(i, k) * b.get(k, j);
                }
                out.set(i, j, acc);
            }
        }
        out
    }

    #[test]
    fn matmul_identity_leaves_matrix_unchanged() {
        let m = Matrix::random_uniform(3, 3, -1.0, 1.0, 7);
        let prod = Matrix::identity(3).matmul(&m).unwrap();
        assert_eq!(prod, m);
    }

    #[test]
    fn matmul_small_frozen_case() {
        let a = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let b = Matrix::from_rows(&[vec![5.0], vec![6.0]]).unwrap();
        let prod = a.matmul(&b).unwrap();
        assert_eq!(prod.data(), &[17.0, 39.0]);
    }

    #[test]
    fn matmul_zero_annihilates() {
        let m = Matrix::random_uniform(4, 2, -1.0, 1.0, 3);
        let z = Matrix::zeros(2, 4);
        let prod = m.matmul(&z).unwrap();
        assert!(prod.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn matmul_matches_naive_oracle() {
        let a = Matrix::random_uniform(5, 7, -2.0, 2.0, 11);
        let b = Matrix::random_uniform(7, 4, -2.0, 2.0, 12);
        let fast = a.matmul(&b).unwrap();
        let slow = naive_matmul(&a, &b);
        for (x, y) in fast.data().iter().zip(slow.data()) {
            assert!(approx_rel(*x, *y, 1e-12));
        }
    }

    #[test]
    fn matmul_dim_mismatch_names_both_shapes() {
        let a = Matrix::zeros(2, 3);
        let b = Matrix::zeros(2, 3);
        let err = a.matmul(&b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("2x3"), "unexpected message: {msg}");
    }

    #[test]
    fn matmul_associative_within_tolerance() {
        for seed in 0..5 {
            let a = Matrix::random_uniform(4, 6, -1.0, 1.0, seed);
            let b = Matrix::random_uniform(6, 3, -1.0, 1.0, seed + 100);
            let c = Matrix::random_uniform(3, 5, -1.0, 1.0, seed + 200);
            let left = a.matmul(&b).unwrap().matmul(&c).unwrap();
            let right = a.matmul(&b.matmul(&c).unwrap()).unwrap();
            let diff = left.sub(&right).unwrap().frobenius_norm();
            assert!(diff <= 1e-9 * left.frobenius_norm().max(1.0));
        }
    }

    #[test]
    fn transpose_is_involutive() {
        let m = Matrix::random_uniform(4, 7, -3.0, 3.0, 5);
        assert_eq!(m.transpose().transpose(), m);
    }

    #[test]
    fn row_norms_identity_and_three_four_five() {
        assert_eq!(Matrix::identity(2).row_norms(), vec![1.0, 1.0]);
        let m = Matrix::from_rows(&[vec![3.0, 4.0]]).unwrap();
        assert_eq!(m.row_norms(), vec![5.0]);
    }

    #[test]
    fn row_norms_match_sum_of_squares_oracle() {
        let m = Matrix::random_uniform(5, 7, -2.0, 2.0, 21);
        let norms = m.row_norms();
        for i in 0..5 {
            let brute: f64 = (0..7).map(|j| m.get(i, j) * m.get(i, j)).sum();
            assert!((norms[i] - brute.sqrt()).abs() <= 1e-12 * brute.sqrt().max(1.0));
        }
        // Frobenius consistency: |M|_F^2 = sum of squared row norms.
        let total: f64 = norms.iter().map(|&n| n * n).sum();
        assert!(approx_rel(total, m.frobenius_norm_sq(), 1e-12));
    }

    #[test]
    fn solve_rejects_singular_system() {
        let a = Matrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 4.0]]).unwrap();
        let b = Matrix::from_rows(&[vec![1.0], vec![2.0]]).unwrap();
        assert!(matches!(solve(&a, &b), Err(Error::Singular { .. })));
    }

    #[test]
    fn ridge_mu_zero_square_invertible_is_exact_solve() {
        let x = Matrix::from_rows(&[vec![2.0, 1.0], vec![1.0, 3.0]]).unwrap();
        let y = Matrix::from_rows(&[vec![1.0], vec![2.0]]).unwrap();
        let w = ridge_solve(&x, &y, 0.0).unwrap();
        let back = x.matmul(&w).unwrap();
        assert!(back.sub(&y).unwrap().frobenius_norm() < 1e-12);
    }

    #[test]
    fn ridge_huge_mu_shrinks_to_zero() {
        let x = Matrix::random_uniform(6, 3, -1.0, 1.0, 8);
        let y = Matrix::random_uniform(6, 2, -1.0, 1.0, 9);
        let w = ridge_solve(&x, &y, 1e12).unwrap();
        assert!(w.frobenius_norm() < 1e-6);
    }

    #[test]
    fn ridge_matches_normal_equations_oracle() {
        // Independent route: explicitly invert (X^T X + mu I) by Gauss-Jordan.
        let x = Matrix::random_uniform(6, 3, -1.0, 1.0, 14);
        let y = Matrix::random_uniform(6, 2, -1.0, 1.0, 15);
        let mu = 0.7;
        let xt = x.transpose();
        let mut gram = xt.matmul(&x).unwrap();
        for i in 0..3 {
            gram.set(i, i, gram.get(i, i) + mu);
        }
        let inv = gauss_jordan_inverse(&gram);
        let oracle = inv.matmul(&xt.matmul(&y).unwrap()).unwrap();
        let w = ridge_solve(&x, &y, mu).unwrap();
        let rel = w.sub(&oracle).unwrap().frobenius_norm() / oracle.frobenius_norm();
        assert!(rel < 1e-9, "relative error {rel}");
    }

    fn gauss_jordan_inverse(m: &Matrix) -> Matrix {
        let n = m.rows();
        let mut a = m.clone();
        let mut inv = Matrix::identity(n);
        for col in 0..n {
            let mut pivot_row = col;
            for r in col + 1..n {
                if a.get(r, col).abs() > a.get(pivot_row, col).abs() {
                    pivot_row = r;
                }
            }
            for j in 0..n {
                let tmp = a.get(col, j);
                a.set(col, j, a.get(pivot_row, j));
                a.set(pivot_row, j, tmp);
                let tmp = inv.get(col, j);
                inv.set(col, j, inv.get(pivot_row, j));
                inv.set(pivot_row, j, tmp);
            }
            let p = a.get(col, col);
            for j in 0..n {
                a.set(col, j, a.get(col, j) / p);
                inv.set(col, j, inv.get(col, j) / p);
            }
            for r in 0..n {
                if r == col {
                    continue;
                }
                let f = a.get(r, col);
                for j in 0..n {
                    a.set(r, j, a.get(r, j) - f * a.get(col, j));
                    inv.set(r, j, inv.get(r, j) - f * inv.get(col, j));
                }
            }
        }
        inv
    }

    #[test]
    fn spectral_norm_of_diagonal_is_largest_entry() {
        let m = Matrix::from_rows(&[vec![3.0, 0.0], vec![0.0, -5.0]]).unwrap();
        let s = spectral_norm(&m).unwrap();
        assert!((s - 5.0).abs() < 1e-6);
    }

    #[test]
    fn spectral_norm_zero_matrix_is_zero() {
        assert_eq!(spectral_norm(&Matrix::zeros(3, 4)).unwrap(), 0.0);
    }

    #[test]
    fn spectral_norm_bounded_by_frobenius() {
        for seed in 0..5 {
            let m = Matrix::random_uniform(5, 4, -2.0, 2.0, 40 + seed);
            let s = spectral_norm(&m).unwrap();
            assert!(s <= m.frobenius_norm() * (1.0 + 1e-8));
            // and at least the norm of any single column
            let col0: f64 = (0..5).map(|i| m.get(i, 0) * m.get(i, 0)).sum::<f64>().sqrt();
            assert!(s >= col0 * (1.0 - 1e-6));
        }
    }

    #[test]
    fn jacobi_reconstructs_symmetric_matrix() {
        let x = Matrix::random_uniform(6, 4, -1.0, 1.0, 31);
        let sym = x.transpose().matmul(&x).unwrap();
        let (vals, vecs) = jacobi_eigh(&sym, 1e-10).unwrap();
        let lambda = Matrix::from_fn(4, 4, |i, j| if i == j { vals[i] } else { 0.0 });
        let rebuilt = vecs
            .matmul(&lambda)
            .unwrap()
            .matmul(&vecs.transpose())
            .unwrap();
        let rel = rebuilt.sub(&sym).unwrap().frobenius_norm() / sym.frobenius_norm();
        assert!(rel < 1e-9, "reconstruction error {rel}");
        // eigenvalues of X^T X are nonnegative
        assert!(vals.iter().all(|&v| v > -1e-10));
    }
}
