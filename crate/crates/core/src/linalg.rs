//! Small linear-algebra layer: a row-compressed sparse matrix and dense
//! solves with residual verification.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Row-compressed sparse matrix. Each row holds `(column, value)` pairs
/// sorted by column with no duplicates.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseRows {
    n_cols: usize,
    rows: Vec<Vec<(usize, f64)>>,
}

impl SparseRows {
    pub fn zeros(n_rows: usize, n_cols: usize) -> Self {
        Self { n_cols, rows: vec![Vec::new(); n_rows] }
    }

    /// Builds a matrix from unsorted rows, summing duplicate columns and
    /// dropping exact zeros.
    pub fn from_rows(n_cols: usize, rows: Vec<Vec<(usize, f64)>>) -> Self {
        let rows = rows
            .into_iter()
            .map(|mut row| {
                row.sort_by_key(|&(c, _)| c);
                let mut merged: Vec<(usize, f64)> = Vec::with_capacity(row.len());
                for (c, v) in row {
                    debug_assert!(c < n_cols);
                    match merged.last_mut() {
                        Some((lc, lv)) if *lc == c => *lv += v,
                        _ => merged.push((c, v)),
                    }
                }
                merged.retain(|&(_, v)| v != 0.0);
                merged
            })
            .collect();
        Self { n_cols, rows }
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn row(&self, i: usize) -> &[(usize, f64)] {
        &self.rows[i]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.rows[i]
            .binary_search_by_key(&j, |&(c, _)| c)
            .map(|k| self.rows[i][k].1)
            .unwrap_or(0.0)
    }

    pub fn nnz(&self) -> usize {
        self.rows.iter().map(Vec::len).sum()
    }

    /// `y = A x`
    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.n_cols);
        self.rows
            .iter()
            .map(|row| row.iter().map(|&(c, v)| v * x[c]).sum())
            .collect()
    }

    /// `y = Aᵀ x`
    pub fn tr_mul_vec(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.rows.len());
        let mut y = vec![0.0; self.n_cols];
        for (row, &xi) in self.rows.iter().zip(x) {
            if xi == 0.0 {
                continue;
            }
            for &(c, v) in row {
                y[c] += v * xi;
            }
        }
        y
    }

    /// Multiplies row `i` by `factors[i]`.
    pub fn scale_rows(&mut self, factors: &[f64]) {
        for (row, &f) in self.rows.iter_mut().zip(factors) {
            for entry in row.iter_mut() {
                entry.1 *= f;
            }
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.rows.len(), self.n_cols);
        for (i, row) in self.rows.iter().enumerate() {
            for &(c, v) in row {
                m[(i, c)] = v;
            }
        }
        m
    }
}

pub(crate) fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0_f64, |acc, x| acc.max(x.abs()))
}

pub(crate) fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Solves `A x = b` by partial-pivot LU and checks
/// `‖Ax − b‖∞ ≤ 1e−10·(1 + ‖b‖∞)`.
pub fn lu_solve(a: DMatrix<f64>, b: &[f64], what: &str) -> Result<Vec<f64>> {
    let n = a.nrows();
    let a_copy = a.clone();
    let lu = a.lu();
    let u = lu.u();
    let (mut umin, mut umax) = (f64::INFINITY, 0.0_f64);
    for i in 0..n {
        let d = u[(i, i)].abs();
        umin = umin.min(d);
        umax = umax.max(d);
    }
    if n > 0 && (umax == 0.0 || umin <= 1e-14 * umax) {
        return Err(Error::SingularSystem(format!(
            "{what}: pivot ratio {:.3e}",
            if umax > 0.0 { umin / umax } else { 0.0 }
        )));
    }
    let rhs = DVector::from_column_slice(b);
    let x = lu
        .solve(&rhs)
        .ok_or_else(|| Error::SingularSystem(format!("{what}: LU solve failed")))?;
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::SingularSystem(format!("{what}: non-finite solution")));
    }
    let r = &a_copy * &x - &rhs;
    let rnorm = r.amax();
    let bnorm = rhs.amax();
    if rnorm > 1e-10 * (1.0 + bnorm) {
        return Err(Error::SingularSystem(format!(
            "{what}: residual {rnorm:.3e} exceeds tolerance"
        )));
    }
    Ok(x.as_slice().to_vec())
}

/// Minimum-norm least-squares solution of `A x ≈ b` via SVD, treating
/// singular values below `1e−10·σ_max` as zero. Returns the solution and the
/// numerical rank.
pub fn min_norm_lstsq(a: DMatrix<f64>, b: &[f64]) -> (Vec<f64>, usize) {
    let svd = a
        .clone()
        .try_svd(true, true, f64::EPSILON, 0)
        .unwrap_or_else(|| a.clone().svd(true, true));
    let smax = svd.singular_values.iter().cloned().fold(0.0_f64, f64::max);
    let tol = 1e-10 * smax;
    let u = svd.u.as_ref().expect("u requested");
    let vt = svd.v_t.as_ref().expect("v_t requested");
    let rhs = DVector::from_column_slice(b);
    let utb = u.transpose() * &rhs;
    let mut rank = 0;
    let mut coeffs = DVector::zeros(svd.singular_values.len());
    for (k, &s) in svd.singular_values.iter().enumerate() {
        if s > tol && s > 0.0 {
            coeffs[k] = utb[k] / s;
            rank += 1;
        }
    }
    let apply = |r: &DVector<f64>| {
        let utr = u.transpose() * r;
        let mut c = DVector::zeros(svd.singular_values.len());
        for (k, &s) in svd.singular_values.iter().enumerate() {
            if s > tol && s > 0.0 {
                c[k] = utr[k] / s;
            }
        }
        vt.transpose() * c
    };
    let mut x = vt.transpose() * &coeffs;
    // iterative refinement against the original matrix
    for _ in 0..2 {
        let r = &rhs - &a * &x;
        x += apply(&r);
    }
    (x.as_slice().to_vec(), rank)
}

/// Spectral radius of a nonnegative square matrix (given as sparse rows) by
/// power iteration from the all-ones vector.
pub fn spectral_radius_nonneg(m: &SparseRows, iterations: usize) -> f64 {
    let n = m.n_rows();
    if n == 0 {
        return 0.0;
    }
    let mut x = vec![1.0; n];
    let mut estimate = 0.0;
    for _ in 0..iterations {
        let y = m.mul_vec(&x);
        let ny = inf_norm(&y);
        let nx = inf_norm(&x);
        if ny == 0.0 {
            return 0.0;
        }
        estimate = ny / nx;
        x = y.into_iter().map(|v| v / ny).collect();
    }
    estimate
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sparse_products_match_dense() {
        let a = SparseRows::from_rows(
            3,
            vec![vec![(2, 1.0), (0, 2.0), (2, 0.5)], vec![], vec![(1, -1.0)]],
        );
        assert_eq!(a.get(0, 2), 1.5);
        assert_eq!(a.nnz(), 3);
        let x = [1.0, 2.0, 3.0];
        let d = a.to_dense();
        let y = a.mul_vec(&x);
        let yd = &d * DVector::from_column_slice(&x);
        assert_eq!(y, yd.as_slice());
        let z = a.tr_mul_vec(&x);
        let zd = d.transpose() * DVector::from_column_slice(&x);
        assert_eq!(z, zd.as_slice());
    }

    #[test]
    fn lu_rejects_singular() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        assert!(matches!(lu_solve(a, &[1.0, 2.0], "t"), Err(Error::SingularSystem(_))));
    }

    #[test]
    fn lstsq_min_norm_on_rank_deficient() {
        // x + y = 2 has min-norm solution (1, 1).
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 0.0]);
        let (x, rank) = min_norm_lstsq(a, &[2.0, 0.0]);
        assert_eq!(rank, 1);
        assert!((x[0] - 1.0).abs() < 1e-12 && (x[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn power_iteration_radius() {
        let m = SparseRows::from_rows(2, vec![vec![(0, 0.5)], vec![(0, 0.25), (1, 0.25)]]);
        assert!((spectral_radius_nonneg(&m, 1000) - 0.5).abs() < 1e-12);
    }
}
