//! Compressed sparse row storage.
//!
//! Every constructor canonicalizes: columns are strictly increasing within a
//! row and no explicit zeros are stored. Products only create entries at
//! structurally reachable positions, so block-diagonal inputs stay exactly
//! block-diagonal.

use crate::dense::Matrix;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq)]
pub struct CsrMatrix<T> {
    n_rows: usize,
    n_cols: usize,
    row_offsets: Vec<usize>,
    col_indices: Vec<usize>,
    values: Vec<T>,
}

impl<T: Scalar> CsrMatrix<T> {
    pub fn zeros(n_rows: usize, n_cols: usize) -> Self {
        Self {
            n_rows,
            n_cols,
            row_offsets: vec![0; n_rows + 1],
            col_indices: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::diagonal(&vec![T::one(); n])
    }

    pub fn diagonal(diag: &[T]) -> Self {
        let mut rows = Vec::with_capacity(diag.len());
        for (i, &d) in diag.iter().enumerate() {
            rows.push(if d == T::zero() { vec![] } else { vec![(i, d)] });
        }
        Self::from_sorted_rows(diag.len(), diag.len(), rows)
    }

    /// Builds a matrix from `(row, col, value)` triplets. Duplicates are summed
    /// and entries that end up exactly zero are dropped.
    pub fn from_triplets(
        n_rows: usize,
        n_cols: usize,
        triplets: &[(usize, usize, T)],
    ) -> Result<Self> {
        let mut per_row: Vec<Vec<(usize, T)>> = vec![Vec::new(); n_rows];
        for &(r, c, v) in triplets {
            if r >= n_rows || c >= n_cols {
                return Err(Error::IndexOutOfRange {
                    row: r,
                    col: c,
                    n_rows,
                    n_cols,
                });
            }
            per_row[r].push((c, v));
        }
        let rows = per_row
            .into_iter()
            .map(|mut row| {
                row.sort_by_key(|&(c, _)| c);
                let mut merged: Vec<(usize, T)> = Vec::with_capacity(row.len());
                for (c, v) in row {
                    match merged.last_mut() {
                        Some((lc, lv)) if *lc == c => *lv += v,
                        _ => merged.push((c, v)),
                    }
                }
                merged
            })
            .collect();
        Ok(Self::from_sorted_rows(n_rows, n_cols, rows))
    }

    /// Rows must already have strictly increasing columns; zeros are dropped.
    fn from_sorted_rows(n_rows: usize, n_cols: usize, rows: Vec<Vec<(usize, T)>>) -> Self {
        let mut row_offsets = Vec::with_capacity(n_rows + 1);
        let mut col_indices = Vec::new();
        let mut values = Vec::new();
        row_offsets.push(0);
        for row in rows {
            for (c, v) in row {
                if v != T::zero() {
                    col_indices.push(c);
                    values.push(v);
                }
            }
            row_offsets.push(col_indices.len());
        }
        Self {
            n_rows,
            n_cols,
            row_offsets,
            col_indices,
            values,
        }
    }

    /// Drops entries whose magnitude is at most `tol`.
    pub fn from_dense(m: &Matrix<T>, tol: T) -> Self {
        let rows = (0..m.rows())
            .map(|i| {
                m.row(i)
                    .iter()
                    .enumerate()
                    .filter(|(_, v)| v.abs() > tol)
                    .map(|(j, &v)| (j, v))
                    .collect()
            })
            .collect();
        Self::from_sorted_rows(m.rows(), m.cols(), rows)
    }

    #[inline]
    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    #[inline]
    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    #[inline]
    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row_offsets(&self) -> &[usize] {
        &self.row_offsets
    }

    pub fn col_indices(&self) -> &[usize] {
        &self.col_indices
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    /// Column indices and values of row `i`.
    #[inline]
    pub fn row(&self, i: usize) -> (&[usize], &[T]) {
        let (s, e) = (self.row_offsets[i], self.row_offsets[i + 1]);
        (&self.col_indices[s..e], &self.values[s..e])
    }

    pub fn row_iter(&self, i: usize) -> impl Iterator<Item = (usize, T)> + '_ {
        let (c, v) = self.row(i);
        c.iter().copied().zip(v.iter().copied())
    }

    /// Iterates stored entries in row-major order.
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, T)> + '_ {
        (0..self.n_rows).flat_map(move |i| self.row_iter(i).map(move |(j, v)| (i, j, v)))
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        let (cols, vals) = self.row(i);
        match cols.binary_search(&j) {
            Ok(k) => vals[k],
            Err(_) => T::zero(),
        }
    }

    pub fn to_dense(&self) -> Matrix<T> {
        let mut m = Matrix::zeros(self.n_rows, self.n_cols);
        for (i, j, v) in self.iter() {
            m[(i, j)] = v;
        }
        m
    }

    pub fn transpose(&self) -> Self {
        let mut counts = vec![0usize; self.n_cols + 1];
        for &c in &self.col_indices {
            counts[c + 1] += 1;
        }
        for k in 0..self.n_cols {
            counts[k + 1] += counts[k];
        }
        let mut next = counts.clone();
        let mut col_indices = vec![0; self.nnz()];
        let mut values = vec![T::zero(); self.nnz()];
        for (i, j, v) in self.iter() {
            let slot = next[j];
            col_indices[slot] = i;
            values[slot] = v;
            next[j] += 1;
        }
        Self {
            n_rows: self.n_cols,
            n_cols: self.n_rows,
            row_offsets: counts,
            col_indices,
            values,
        }
    }

    pub fn row_sums(&self) -> Vec<T> {
        (0..self.n_rows)
            .map(|i| self.row(i).1.iter().copied().sum())
            .collect()
    }

    pub fn col_sums(&self) -> Vec<T> {
        let mut out = vec![T::zero(); self.n_cols];
        for (_, j, v) in self.iter() {
            out[j] += v;
        }
        out
    }

    pub fn diag(&self) -> Vec<T> {
        (0..self.n_rows.min(self.n_cols))
            .map(|i| self.get(i, i))
            .collect()
    }

    /// Induced 1-norm: maximum absolute column sum.
    pub fn norm_one(&self) -> T {
        let mut sums = vec![T::zero(); self.n_cols];
        for (_, j, v) in self.iter() {
            sums[j] += v.abs();
        }
        sums.into_iter().fold(T::zero(), T::max)
    }

    pub fn max_value(&self) -> Option<T> {
        self.values.iter().copied().reduce(T::max)
    }

    pub fn scale(&self, c: T) -> Self {
        self.map_values(|_, _, v| v * c)
    }

    /// Applies `f(row, col, value)` to every stored entry, dropping new zeros.
    pub fn map_values(&self, f: impl Fn(usize, usize, T) -> T) -> Self {
        let rows = (0..self.n_rows)
            .map(|i| self.row_iter(i).map(|(j, v)| (j, f(i, j, v))).collect())
            .collect();
        Self::from_sorted_rows(self.n_rows, self.n_cols, rows)
    }

    /// `diag(left) * self * diag(right)`.
    pub fn scale_rows_cols(&self, left: &[T], right: &[T]) -> Result<Self> {
        if left.len() != self.n_rows || right.len() != self.n_cols {
            return Err(Error::Shape(format!(
                "diagonal scaling of {}x{} by {} and {}",
                self.n_rows,
                self.n_cols,
                left.len(),
                right.len()
            )));
        }
        Ok(self.map_values(|i, j, v| left[i] * v * right[j]))
    }

    /// `self + alpha * other`.
    pub fn add_scaled(&self, other: &Self, alpha: T) -> Result<Self> {
        if self.n_rows != other.n_rows || self.n_cols != other.n_cols {
            return Err(Error::Shape(format!(
                "cannot add {}x{} and {}x{}",
                self.n_rows, self.n_cols, other.n_rows, other.n_cols
            )));
        }
        let rows = (0..self.n_rows)
            .map(|i| {
                let (ac, av) = self.row(i);
                let (bc, bv) = other.row(i);
                let mut out = Vec::with_capacity(ac.len() + bc.len());
                let (mut p, mut q) = (0, 0);
                while p < ac.len() || q < bc.len() {
                    if q == bc.len() || (p < ac.len() && ac[p] < bc[q]) {
                        out.push((ac[p], av[p]));
                        p += 1;
                    } else if p == ac.len() || bc[q] < ac[p] {
                        out.push((bc[q], alpha * bv[q]));
                        q += 1;
                    } else {
                        out.push((ac[p], av[p] + alpha * bv[q]));
                        p += 1;
                        q += 1;
                    }
                }
                out
            })
            .collect();
        Ok(Self::from_sorted_rows(self.n_rows, self.n_cols, rows))
    }

    /// Sparse-sparse product (row-wise Gustavson with a dense accumulator).
    pub fn matmul(&self, other: &Self) -> Result<Self> {
        if self.n_cols != other.n_rows {
            return Err(Error::Shape(format!(
                "cannot multiply {}x{} by {}x{}",
                self.n_rows, self.n_cols, other.n_rows, other.n_cols
            )));
        }
        let mut acc = vec![T::zero(); other.n_cols];
        let mut touched = vec![false; other.n_cols];
        let mut pattern: Vec<usize> = Vec::new();
        let mut rows = Vec::with_capacity(self.n_rows);
        for i in 0..self.n_rows {
            for (k, a) in self.row_iter(i) {
                for (j, b) in other.row_iter(k) {
                    if !touched[j] {
                        touched[j] = true;
                        pattern.push(j);
                    }
                    acc[j] += a * b;
                }
            }
            pattern.sort_unstable();
            let row: Vec<(usize, T)> = pattern.iter().map(|&j| (j, acc[j])).collect();
            for &j in &pattern {
                acc[j] = T::zero();
                touched[j] = false;
            }
            pattern.clear();
            rows.push(row);
        }
        Ok(Self::from_sorted_rows(self.n_rows, other.n_cols, rows))
    }

    /// Sparse-dense product `self * x`.
    pub fn mul_dense(&self, x: &Matrix<T>) -> Result<Matrix<T>> {
        if self.n_cols != x.rows() {
            return Err(Error::Shape(format!(
                "cannot multiply {}x{} sparse by {}x{} dense",
                self.n_rows,
                self.n_cols,
                x.rows(),
                x.cols()
            )));
        }
        let mut out = Matrix::zeros(self.n_rows, x.cols());
        for i in 0..self.n_rows {
            let out_row = out.row_mut(i);
            for (k, a) in self.row_iter(i) {
                for (o, &b) in out_row.iter_mut().zip(x.row(k)) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    /// `selfᵀ * x` without materializing the transpose.
    pub fn transpose_mul_dense(&self, x: &Matrix<T>) -> Result<Matrix<T>> {
        if self.n_rows != x.rows() {
            return Err(Error::Shape(format!(
                "cannot multiply transpose of {}x{} by {}x{}",
                self.n_rows,
                self.n_cols,
                x.rows(),
                x.cols()
            )));
        }
        let mut out = Matrix::zeros(self.n_cols, x.cols());
        for i in 0..self.n_rows {
            for (j, a) in self.row_iter(i) {
                for (o, &b) in out.row_mut(j).iter_mut().zip(x.row(i)) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    pub fn is_symmetric(&self, tol: T) -> bool {
        if self.n_rows != self.n_cols {
            return false;
        }
        let t = self.transpose();
        match self.add_scaled(&t, -T::one()) {
            Ok(d) => d.values.iter().all(|v| v.abs() <= tol),
            Err(_) => false,
        }
    }

    /// Symmetric reindexing: entry `(i, j)` moves to `(perm[i], perm[j])`.
    pub fn permute_symmetric(&self, perm: &[usize]) -> Self {
        self.permute(perm, perm)
    }

    /// Entry `(i, j)` moves to `(row_perm[i], col_perm[j])`.
    pub fn permute(&self, row_perm: &[usize], col_perm: &[usize]) -> Self {
        let trip: Vec<_> = self
            .iter()
            .map(|(i, j, v)| (row_perm[i], col_perm[j], v))
            .collect();
        Self::from_triplets(self.n_rows, self.n_cols, &trip).expect("permutation stays in range")
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn cast<U: Scalar>(&self) -> CsrMatrix<U> {
        CsrMatrix {
            n_rows: self.n_rows,
            n_cols: self.n_cols,
            row_offsets: self.row_offsets.clone(),
            col_indices: self.col_indices.clone(),
            values: self.values.iter().map(|&v| U::lit(v.as_f64())).collect(),
        }
    }
}
