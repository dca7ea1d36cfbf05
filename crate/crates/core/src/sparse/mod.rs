//! Sparse matrix storage and the handful of kernels the solver needs.
//!
//! [`CooMatrix`] is the assembly and pooling format (parallel `row`, `col`,
//! `val` arrays). [`CsrMatrix`] is the canonical compute format: within each
//! row column indices are strictly increasing and no explicit zeros are kept.

mod dense;
mod envelope;
pub mod market;

pub use dense::{lu_solve_dense, DenseMatrix, LuFactorization};
pub use envelope::EnvelopeCholesky;

use crate::{Error, Result};

/// Coordinate-list matrix. Duplicate entries are allowed until conversion.
#[derive(Debug, Clone, PartialEq)]
pub struct CooMatrix {
    n_rows: usize,
    n_cols: usize,
    rows: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl CooMatrix {
    pub fn new(n_rows: usize, n_cols: usize) -> Self {
        Self {
            n_rows,
            n_cols,
            rows: Vec::new(),
            cols: Vec::new(),
            vals: Vec::new(),
        }
    }

    pub fn with_capacity(n_rows: usize, n_cols: usize, capacity: usize) -> Self {
        Self {
            n_rows,
            n_cols,
            rows: Vec::with_capacity(capacity),
            cols: Vec::with_capacity(capacity),
            vals: Vec::with_capacity(capacity),
        }
    }

    /// Builds a COO matrix from `(row, col, value)` triplets.
    pub fn from_triplets(
        n_rows: usize,
        n_cols: usize,
        triplets: impl IntoIterator<Item = (usize, usize, f64)>,
    ) -> Result<Self> {
        let mut coo = Self::new(n_rows, n_cols);
        for (r, c, v) in triplets {
            coo.push(r, c, v)?;
        }
        Ok(coo)
    }

    pub fn push(&mut self, row: usize, col: usize, val: f64) -> Result<()> {
        if row >= self.n_rows || col >= self.n_cols {
            return Err(Error::IndexOutOfBounds {
                row,
                col,
                n_rows: self.n_rows,
                n_cols: self.n_cols,
            });
        }
        self.rows.push(row);
        self.cols.push(col);
        self.vals.push(val);
        Ok(())
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    /// Number of stored entries, duplicates included.
    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn rows(&self) -> &[usize] {
        &self.rows
    }

    pub fn cols(&self) -> &[usize] {
        &self.cols
    }

    pub fn vals(&self) -> &[f64] {
        &self.vals
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.rows
            .iter()
            .zip(&self.cols)
            .zip(&self.vals)
            .map(|((&r, &c), &v)| (r, c, v))
    }

    /// Sums duplicates, drops exact zeros and returns canonical CSR.
    pub fn to_csr(&self) -> CsrMatrix {
        coo_to_csr(self)
    }
}

/// Converts COO to canonical CSR. Duplicates are summed in insertion order.
pub fn coo_to_csr(m: &CooMatrix) -> CsrMatrix {
    // counting sort by row keeps insertion order inside a row
    let mut row_counts = vec![0usize; m.n_rows + 1];
    for &r in &m.rows {
        row_counts[r + 1] += 1;
    }
    for i in 0..m.n_rows {
        row_counts[i + 1] += row_counts[i];
    }
    let mut order = vec![0usize; m.nnz()];
    let mut next = row_counts.clone();
    for (k, &r) in m.rows.iter().enumerate() {
        order[next[r]] = k;
        next[r] += 1;
    }

    let mut row_ptr = Vec::with_capacity(m.n_rows + 1);
    let mut col_idx = Vec::with_capacity(m.nnz());
    let mut values = Vec::with_capacity(m.nnz());
    row_ptr.push(0);
    let mut scratch: Vec<(usize, f64)> = Vec::new();
    for r in 0..m.n_rows {
        scratch.clear();
        scratch.extend(
            order[row_counts[r]..row_counts[r + 1]]
                .iter()
                .map(|&k| (m.cols[k], m.vals[k])),
        );
        // stable: equal columns keep insertion order for the summation
        scratch.sort_by_key(|&(c, _)| c);
        let mut i = 0;
        while i < scratch.len() {
            let c = scratch[i].0;
            let mut acc = 0.0;
            while i < scratch.len() && scratch[i].0 == c {
                acc += scratch[i].1;
                i += 1;
            }
            if acc != 0.0 {
                col_idx.push(c);
                values.push(acc);
            }
        }
        row_ptr.push(col_idx.len());
    }
    CsrMatrix {
        n_rows: m.n_rows,
        n_cols: m.n_cols,
        row_ptr,
        col_idx,
        values,
    }
}

/// Compressed sparse row matrix in canonical form.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    n_rows: usize,
    n_cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Validates raw arrays and builds a matrix. Rows must already be
    /// sorted with strictly increasing columns and no stored zeros.
    pub fn from_raw(
        n_rows: usize,
        n_cols: usize,
        row_ptr: Vec<usize>,
        col_idx: Vec<usize>,
        values: Vec<f64>,
    ) -> Result<Self> {
        if row_ptr.len() != n_rows + 1 {
            return Err(Error::Structure(format!(
                "row_ptr has {} entries, expected {}",
                row_ptr.len(),
                n_rows + 1
            )));
        }
        if row_ptr[0] != 0 || row_ptr[n_rows] != col_idx.len() || col_idx.len() != values.len() {
            return Err(Error::Structure(
                "row_ptr bounds disagree with col_idx/values lengths".into(),
            ));
        }
        for r in 0..n_rows {
            let (s, e) = (row_ptr[r], row_ptr[r + 1]);
            if s > e {
                return Err(Error::Structure(format!("row_ptr decreases at row {r}")));
            }
            for k in s..e {
                if col_idx[k] >= n_cols {
                    return Err(Error::IndexOutOfBounds {
                        row: r,
                        col: col_idx[k],
                        n_rows,
                        n_cols,
                    });
                }
                if k > s && col_idx[k] <= col_idx[k - 1] {
                    return Err(Error::Structure(format!(
                        "columns not strictly increasing in row {r}"
                    )));
                }
                if values[k] == 0.0 {
                    return Err(Error::Structure(format!("explicit zero in row {r}")));
                }
            }
        }
        Ok(Self {
            n_rows,
            n_cols,
            row_ptr,
            col_idx,
            values,
        })
    }

    pub fn identity(n: usize) -> Self {
        Self {
            n_rows: n,
            n_cols: n,
            row_ptr: (0..=n).collect(),
            col_idx: (0..n).collect(),
            values: vec![1.0; n],
        }
    }

    pub fn zeros(n_rows: usize, n_cols: usize) -> Self {
        Self {
            n_rows,
            n_cols,
            row_ptr: vec![0; n_rows + 1],
            col_idx: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn from_dense(d: &DenseMatrix) -> Self {
        let mut row_ptr = vec![0];
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        for i in 0..d.n_rows() {
            for j in 0..d.n_cols() {
                let v = d.get(i, j);
                if v != 0.0 {
                    col_idx.push(j);
                    values.push(v);
                }
            }
            row_ptr.push(col_idx.len());
        }
        Self {
            n_rows: d.n_rows(),
            n_cols: d.n_cols(),
            row_ptr,
            col_idx,
            values,
        }
    }

    pub fn to_dense(&self) -> DenseMatrix {
        let mut d = DenseMatrix::zeros(self.n_rows, self.n_cols);
        for i in 0..self.n_rows {
            for (j, v) in self.row(i) {
                d.set(i, j, v);
            }
        }
        d
    }

    /// Row-major COO copy of the stored entries.
    pub fn to_coo(&self) -> CooMatrix {
        let mut coo = CooMatrix::with_capacity(self.n_rows, self.n_cols, self.nnz());
        for i in 0..self.n_rows {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                coo.rows.push(i);
                coo.cols.push(self.col_idx[k]);
                coo.vals.push(self.values[k]);
            }
        }
        coo
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row_ptr(&self) -> &[usize] {
        &self.row_ptr
    }

    pub fn col_idx(&self) -> &[usize] {
        &self.col_idx
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// `(col, value)` pairs of row `i`.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let (s, e) = (self.row_ptr[i], self.row_ptr[i + 1]);
        self.col_idx[s..e]
            .iter()
            .copied()
            .zip(self.values[s..e].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (s, e) = (self.row_ptr[i], self.row_ptr[i + 1]);
        match self.col_idx[s..e].binary_search(&j) {
            Ok(k) => self.values[s + k],
            Err(_) => 0.0,
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n_rows.min(self.n_cols))
            .map(|i| self.get(i, i))
            .collect()
    }

    /// `y = A x`, accumulated left to right within each row.
    pub fn spmv(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.n_cols {
            return Err(Error::DimensionMismatch(format!(
                "spmv: matrix has {} columns, vector has length {}",
                self.n_cols,
                x.len()
            )));
        }
        let mut y = vec![0.0; self.n_rows];
        self.spmv_into(x, &mut y);
        Ok(y)
    }

    /// Unchecked-length variant of [`spmv`](Self::spmv) writing into `y`.
    pub fn spmv_into(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.n_cols);
        debug_assert_eq!(y.len(), self.n_rows);
        for (i, yi) in y.iter_mut().enumerate() {
            let (s, e) = (self.row_ptr[i], self.row_ptr[i + 1]);
            let mut acc = 0.0;
            for k in s..e {
                acc += self.values[k] * x[self.col_idx[k]];
            }
            *yi = acc;
        }
    }

    /// `r = f - A u` written into `r`.
    pub fn residual_into(&self, u: &[f64], f: &[f64], r: &mut [f64]) {
        for i in 0..self.n_rows {
            let (s, e) = (self.row_ptr[i], self.row_ptr[i + 1]);
            let mut acc = 0.0;
            for k in s..e {
                acc += self.values[k] * u[self.col_idx[k]];
            }
            r[i] = f[i] - acc;
        }
    }

    pub fn transpose(&self) -> CsrMatrix {
        let mut counts = vec![0usize; self.n_cols + 1];
        for &c in &self.col_idx {
            counts[c + 1] += 1;
        }
        for j in 0..self.n_cols {
            counts[j + 1] += counts[j];
        }
        let mut next = counts.clone();
        let mut col_idx = vec![0usize; self.nnz()];
        let mut values = vec![0.0; self.nnz()];
        // rows are visited in increasing order, so each output row is sorted
        for i in 0..self.n_rows {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                let j = self.col_idx[k];
                col_idx[next[j]] = i;
                values[next[j]] = self.values[k];
                next[j] += 1;
            }
        }
        CsrMatrix {
            n_rows: self.n_cols,
            n_cols: self.n_rows,
            row_ptr: counts,
            col_idx,
            values,
        }
    }

    /// Sparse product `self * rhs` (Gustavson), canonical output.
    pub fn matmul(&self, rhs: &CsrMatrix) -> Result<CsrMatrix> {
        if self.n_cols != rhs.n_rows {
            return Err(Error::DimensionMismatch(format!(
                "matmul: {}x{} times {}x{}",
                self.n_rows, self.n_cols, rhs.n_rows, rhs.n_cols
            )));
        }
        let mut acc = vec![0.0; rhs.n_cols];
        let mut marker = vec![usize::MAX; rhs.n_cols];
        let mut pattern: Vec<usize> = Vec::new();
        let mut row_ptr = Vec::with_capacity(self.n_rows + 1);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        row_ptr.push(0);
        for i in 0..self.n_rows {
            pattern.clear();
            for ka in self.row_ptr[i]..self.row_ptr[i + 1] {
                let k = self.col_idx[ka];
                let a_ik = self.values[ka];
                for kb in rhs.row_ptr[k]..rhs.row_ptr[k + 1] {
                    let j = rhs.col_idx[kb];
                    if marker[j] != i {
                        marker[j] = i;
                        acc[j] = 0.0;
                        pattern.push(j);
                    }
                    acc[j] += a_ik * rhs.values[kb];
                }
            }
            pattern.sort_unstable();
            for &j in &pattern {
                if acc[j] != 0.0 {
                    col_idx.push(j);
                    values.push(acc[j]);
                }
            }
            row_ptr.push(col_idx.len());
        }
        Ok(CsrMatrix {
            n_rows: self.n_rows,
            n_cols: rhs.n_cols,
            row_ptr,
            col_idx,
            values,
        })
    }

    /// Largest `|a_ij - a_ji|` over stored entries of either matrix.
    pub fn max_asymmetry(&self) -> f64 {
        if self.n_rows != self.n_cols {
            return f64::INFINITY;
        }
        max_abs_diff(self, &self.transpose())
    }

    /// Multiplies every stored value by `s`.
    pub fn scaled(&self, s: f64) -> CsrMatrix {
        let mut out = self.clone();
        out.values.iter_mut().for_each(|v| *v *= s);
        out
    }
}

/// Max-norm of `a - b` over the union of both sparsity patterns.
pub fn max_abs_diff(a: &CsrMatrix, b: &CsrMatrix) -> f64 {
    assert_eq!(a.n_rows, b.n_rows);
    assert_eq!(a.n_cols, b.n_cols);
    let mut worst: f64 = 0.0;
    for i in 0..a.n_rows {
        let mut ra = a.row(i).peekable();
        let mut rb = b.row(i).peekable();
        loop {
            let d = match (ra.peek(), rb.peek()) {
                (None, None) => break,
                (Some(&(_, va)), None) => {
                    ra.next();
                    va.abs()
                }
                (None, Some(&(_, vb))) => {
                    rb.next();
                    vb.abs()
                }
                (Some(&(ca, va)), Some(&(cb, vb))) => {
                    if ca == cb {
                        ra.next();
                        rb.next();
                        (va - vb).abs()
                    } else if ca < cb {
                        ra.next();
                        va.abs()
                    } else {
                        rb.next();
                        vb.abs()
                    }
                }
            };
            worst = worst.max(d);
        }
    }
    worst
}

/// Galerkin-style product `r * a * p`, evaluated as `(r * a) * p`.
pub fn triple_product(r: &CsrMatrix, a: &CsrMatrix, p: &CsrMatrix) -> Result<CsrMatrix> {
    if r.n_cols != a.n_rows || a.n_cols != p.n_rows {
        return Err(Error::DimensionMismatch(format!(
            "triple product chain {}x{} * {}x{} * {}x{}",
            r.n_rows, r.n_cols, a.n_rows, a.n_cols, p.n_rows, p.n_cols
        )));
    }
    r.matmul(a)?.matmul(p)
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}
