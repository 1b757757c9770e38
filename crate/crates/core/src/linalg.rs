//! Compressed-row sparse matrices and a Jacobi-preconditioned conjugate gradient solver.

use std::sync::Arc;

use log::trace;

use crate::error::{Error, Result};
use crate::exec::Exec;

pub const DEFAULT_PCG_TOL: f64 = 1e-10;

/// Row offsets and column indices of a compressed-row matrix.
///
/// Column indices are strictly increasing within each row. Patterns are
/// shared between all operators assembled on the same space, so matrices can
/// be combined entrywise.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CsrPattern {
    n_rows: usize,
    n_cols: usize,
    row_offsets: Vec<usize>,
    col_indices: Vec<usize>,
}

impl CsrPattern {
    /// Builds a pattern from per-row column lists; duplicates are removed.
    pub fn from_rows(n_cols: usize, rows: Vec<Vec<usize>>) -> Self {
        let mut row_offsets = Vec::with_capacity(rows.len() + 1);
        let mut col_indices = Vec::new();
        row_offsets.push(0);
        for mut cols in rows.into_iter() {
            cols.sort_unstable();
            cols.dedup();
            debug_assert!(cols.last().is_none_or(|&c| c < n_cols));
            col_indices.extend_from_slice(&cols);
            row_offsets.push(col_indices.len());
        }
        CsrPattern { n_rows: row_offsets.len() - 1, n_cols, row_offsets, col_indices }
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn nnz(&self) -> usize {
        self.col_indices.len()
    }

    pub fn row_offsets(&self) -> &[usize] {
        &self.row_offsets
    }

    pub fn col_indices(&self) -> &[usize] {
        &self.col_indices
    }

    pub fn row(&self, i: usize) -> std::ops::Range<usize> {
        self.row_offsets[i]..self.row_offsets[i + 1]
    }

    /// Position of entry `(i, j)` in the value array.
    pub fn position(&self, i: usize, j: usize) -> Option<usize> {
        let r = self.row(i);
        self.col_indices[r.clone()].binary_search(&j).ok().map(|k| r.start + k)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SparseMatrix {
    pattern: Arc<CsrPattern>,
    values: Vec<f64>,
}

impl SparseMatrix {
    pub fn zeros(pattern: Arc<CsrPattern>) -> Self {
        let nnz = pattern.nnz();
        SparseMatrix { pattern, values: vec![0.0; nnz] }
    }

    pub fn from_parts(pattern: Arc<CsrPattern>, values: Vec<f64>) -> Result<Self> {
        if values.len() != pattern.nnz() {
            return Err(Error::InvalidArgument(format!(
                "{} values for a pattern with {} entries",
                values.len(),
                pattern.nnz()
            )));
        }
        Ok(SparseMatrix { pattern, values })
    }

    /// Sums duplicate `(row, col, value)` entries.
    pub fn from_triplets(n_rows: usize, n_cols: usize, triplets: &[(usize, usize, f64)]) -> Result<Self> {
        let mut rows = vec![Vec::new(); n_rows];
        for &(i, j, _) in triplets {
            if i >= n_rows || j >= n_cols {
                return Err(Error::InvalidArgument(format!("entry ({i}, {j}) outside {n_rows}x{n_cols}")));
            }
            rows[i].push(j);
        }
        let pattern = Arc::new(CsrPattern::from_rows(n_cols, rows));
        let mut m = SparseMatrix::zeros(pattern);
        for &(i, j, v) in triplets {
            let k = m.pattern.position(i, j).expect("entry present in pattern");
            m.values[k] += v;
        }
        Ok(m)
    }

    pub fn identity(n: usize) -> Self {
        Self::from_diagonal(&vec![1.0; n])
    }

    pub fn from_diagonal(d: &[f64]) -> Self {
        let rows = (0..d.len()).map(|i| vec![i]).collect();
        let pattern = Arc::new(CsrPattern::from_rows(d.len(), rows));
        SparseMatrix { pattern, values: d.to_vec() }
    }

    /// Dense row-major input; exact zeros are dropped.
    pub fn from_dense(rows: &[Vec<f64>]) -> Result<Self> {
        let n_cols = rows.first().map_or(0, |r| r.len());
        let mut triplets = Vec::new();
        for (i, r) in rows.iter().enumerate() {
            if r.len() != n_cols {
                return Err(Error::InvalidArgument("ragged dense matrix".into()));
            }
            for (j, &v) in r.iter().enumerate() {
                if v != 0.0 {
                    triplets.push((i, j, v));
                }
            }
        }
        Self::from_triplets(rows.len(), n_cols, &triplets)
    }

    /// Symmetric tridiagonal matrix with constant bands.
    pub fn tridiagonal(n: usize, off: f64, diag: f64) -> Self {
        let mut t = Vec::with_capacity(3 * n);
        for i in 0..n {
            if i > 0 {
                t.push((i, i - 1, off));
            }
            t.push((i, i, diag));
            if i + 1 < n {
                t.push((i, i + 1, off));
            }
        }
        Self::from_triplets(n, n, &t).expect("indices in range")
    }

    pub fn n_rows(&self) -> usize {
        self.pattern.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.pattern.n_cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn pattern(&self) -> &Arc<CsrPattern> {
        &self.pattern
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.pattern.position(i, j).map_or(0.0, |k| self.values[k])
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n_rows()).map(|i| self.get(i, i)).collect()
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut d = vec![vec![0.0; self.n_cols()]; self.n_rows()];
        for (i, row) in d.iter_mut().enumerate() {
            for k in self.pattern.row(i) {
                row[self.pattern.col_indices[k]] = self.values[k];
            }
        }
        d
    }

    /// `|A_ij - A_ji| <= tol * max(1, |A_ij|)` for every stored entry, with
    /// the transposed entry present in the pattern.
    pub fn is_symmetric(&self, tol: f64) -> bool {
        if self.n_rows() != self.n_cols() {
            return false;
        }
        for i in 0..self.n_rows() {
            for k in self.pattern.row(i) {
                let j = self.pattern.col_indices[k];
                let a = self.values[k];
                let Some(kt) = self.pattern.position(j, i) else {
                    if a != 0.0 {
                        return false;
                    }
                    continue;
                };
                if (a - self.values[kt]).abs() > tol * a.abs().max(1.0) {
                    return false;
                }
            }
        }
        true
    }

    fn same_pattern(&self, other: &SparseMatrix) -> bool {
        Arc::ptr_eq(&self.pattern, &other.pattern) || self.pattern == other.pattern
    }

    /// `self += s * other` for matrices sharing a pattern.
    pub fn add_scaled(&mut self, s: f64, other: &SparseMatrix) -> Result<()> {
        if !self.same_pattern(other) {
            return Err(Error::InvalidArgument("matrices have different sparsity patterns".into()));
        }
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += s * b;
        }
        Ok(())
    }

    pub fn scale(&mut self, s: f64) {
        self.values.iter_mut().for_each(|v| *v *= s);
    }

    pub fn spmv(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut y = vec![0.0; self.n_rows()];
        self.spmv_into(x, &mut y)?;
        Ok(y)
    }

    pub fn spmv_into(&self, x: &[f64], y: &mut [f64]) -> Result<()> {
        self.spmv_into_with(Exec::default(), x, y)
    }

    pub fn spmv_into_with(&self, exec: Exec, x: &[f64], y: &mut [f64]) -> Result<()> {
        if x.len() != self.n_cols() || y.len() != self.n_rows() {
            return Err(Error::InvalidArgument(format!(
                "spmv dimension mismatch: {}x{} matrix, x of length {}, y of length {}",
                self.n_rows(),
                self.n_cols(),
                x.len(),
                y.len()
            )));
        }
        let offsets = &self.pattern.row_offsets;
        let cols = &self.pattern.col_indices;
        let vals = &self.values;
        exec.fill(y, |i| {
            let mut s = 0.0;
            for k in offsets[i]..offsets[i + 1] {
                s += vals[k] * x[cols[k]];
            }
            s
        });
        Ok(())
    }

    /// `x^T A x`.
    pub fn quadratic_form(&self, x: &[f64]) -> Result<f64> {
        let ax = self.spmv(x)?;
        Ok(Exec::default().dot(x, &ax))
    }
}

/// `y = A x`.
pub fn spmv(a: &SparseMatrix, x: &[f64]) -> Result<Vec<f64>> {
    a.spmv(x)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolveReport {
    pub iterations: usize,
    pub relative_residual: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolverConfig {
    pub tol: f64,
    /// `None` means `10 * n`.
    pub max_iter: Option<usize>,
    pub exec: Exec,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig { tol: DEFAULT_PCG_TOL, max_iter: None, exec: Exec::default() }
    }
}

/// Jacobi-preconditioned conjugate gradients from a zero initial guess.
pub fn pcg(a: &SparseMatrix, b: &[f64], tol: f64, max_iter: usize) -> Result<(Vec<f64>, SolveReport)> {
    let cfg = SolverConfig { tol, max_iter: Some(max_iter), exec: Exec::default() };
    let mut x = vec![0.0; b.len()];
    let report = pcg_solve(a, b, &mut x, &cfg)?;
    Ok((x, report))
}

/// Jacobi-preconditioned conjugate gradients starting from the contents of `x`.
///
/// On success `||b - A x||_2 <= tol * ||b||_2`. A right-hand side of zero
/// yields `x = 0` without iterating.
pub fn pcg_solve(a: &SparseMatrix, b: &[f64], x: &mut [f64], cfg: &SolverConfig) -> Result<SolveReport> {
    let n = a.n_rows();
    if a.n_cols() != n || b.len() != n || x.len() != n {
        return Err(Error::InvalidArgument("pcg needs a square system with matching vectors".into()));
    }
    if !(cfg.tol > 0.0) {
        return Err(Error::InvalidArgument(format!("pcg tolerance must be positive, got {}", cfg.tol)));
    }
    let exec = cfg.exec;
    let max_iter = cfg.max_iter.unwrap_or(10 * n.max(1));

    let diag = a.diagonal();
    let mut inv_diag = vec![0.0; n];
    for (i, &d) in diag.iter().enumerate() {
        if d == 0.0 {
            return Err(Error::SingularPreconditioner { row: i });
        }
        inv_diag[i] = 1.0 / d;
    }

    let b_norm = exec.norm2(b);
    if b_norm == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return Ok(SolveReport { iterations: 0, relative_residual: 0.0 });
    }

    let mut r = vec![0.0; n];
    a.spmv_into_with(exec, x, &mut r)?;
    for (ri, bi) in r.iter_mut().zip(b) {
        *ri = bi - *ri;
    }
    let mut res = exec.norm2(&r);
    if res <= cfg.tol * b_norm {
        return Ok(SolveReport { iterations: 0, relative_residual: res / b_norm });
    }

    let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(r, d)| r * d).collect();
    let mut p = z.clone();
    let mut ap = vec![0.0; n];
    let mut rz = exec.dot(&r, &z);
    let mut iterations = 0;

    while iterations < max_iter {
        a.spmv_into_with(exec, &p, &mut ap)?;
        let pap = exec.dot(&p, &ap);
        if !(pap > 0.0) || !pap.is_finite() {
            trace!("pcg breakdown at iteration {iterations}: p^T A p = {pap}");
            break;
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        iterations += 1;
        res = exec.norm2(&r);
        if res <= cfg.tol * b_norm {
            return Ok(SolveReport { iterations, relative_residual: res / b_norm });
        }
        for i in 0..n {
            z[i] = r[i] * inv_diag[i];
        }
        let rz_new = exec.dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Err(Error::IterativeFailure(SolveReport { iterations, relative_residual: res / b_norm }))
}
