//! Compressed sparse row matrices.

use std::io::Write;

use crate::error::{Error, Result};

/// A real matrix in compressed sparse row layout. Column indices are strictly
/// increasing within each row.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    rows: usize,
    cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

/// Coordinate-format accumulator. Duplicate entries are summed in insertion
/// order when converted, so a fixed insertion order gives bitwise-identical
/// matrices.
#[derive(Debug, Clone)]
pub struct TripletBuilder {
    rows: usize,
    cols: usize,
    entries: Vec<(usize, usize, f64)>,
}

impl TripletBuilder {
    pub fn new(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            entries: Vec::new(),
        }
    }

    pub fn with_capacity(rows: usize, cols: usize, capacity: usize) -> Self {
        Self {
            rows,
            cols,
            entries: Vec::with_capacity(capacity),
        }
    }

    pub fn push(&mut self, row: usize, col: usize, value: f64) {
        debug_assert!(row < self.rows && col < self.cols);
        self.entries.push((row, col, value));
    }

    pub fn build(self) -> SparseMatrix {
        let mut counts = vec![0usize; self.rows + 1];
        for &(r, _, _) in &self.entries {
            counts[r + 1] += 1;
        }
        for r in 0..self.rows {
            counts[r + 1] += counts[r];
        }
        // counting sort by row keeps insertion order within a row
        let mut next = counts.clone();
        let mut by_row = vec![(0usize, 0.0f64); self.entries.len()];
        for &(r, c, v) in &self.entries {
            by_row[next[r]] = (c, v);
            next[r] += 1;
        }

        let mut row_ptr = Vec::with_capacity(self.rows + 1);
        let mut col_idx = Vec::with_capacity(by_row.len());
        let mut values = Vec::with_capacity(by_row.len());
        row_ptr.push(0);
        for r in 0..self.rows {
            let row = &mut by_row[counts[r]..counts[r + 1]];
            // stable: equal columns keep insertion order for summation
            row.sort_by_key(|&(c, _)| c);
            let mut k = 0;
            while k < row.len() {
                let c = row[k].0;
                let mut sum = row[k].1;
                k += 1;
                while k < row.len() && row[k].0 == c {
                    sum += row[k].1;
                    k += 1;
                }
                col_idx.push(c);
                values.push(sum);
            }
            row_ptr.push(col_idx.len());
        }
        SparseMatrix {
            rows: self.rows,
            cols: self.cols,
            row_ptr,
            col_idx,
            values,
        }
    }
}

impl SparseMatrix {
    pub fn from_triplets(rows: usize, cols: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let mut b = TripletBuilder::with_capacity(rows, cols, triplets.len());
        for &(r, c, v) in triplets {
            b.push(r, c, v);
        }
        b.build()
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        let n = diag.len();
        SparseMatrix {
            rows: n,
            cols: n,
            row_ptr: (0..=n).collect(),
            col_idx: (0..n).collect(),
            values: diag.to_vec(),
        }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        SparseMatrix {
            rows,
            cols,
            row_ptr: vec![0; rows + 1],
            col_idx: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }
    pub fn cols(&self) -> usize {
        self.cols
    }
    pub fn nnz(&self) -> usize {
        self.values.len()
    }
    pub fn row_ptr(&self) -> &[usize] {
        &self.row_ptr
    }
    pub fn col_indices(&self) -> &[usize] {
        &self.col_idx
    }
    pub fn values(&self) -> &[f64] {
        &self.values
    }
    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    /// Column indices and values of row `i`.
    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        (&self.col_idx[r.clone()], &self.values[r])
    }

    /// Entry `(i, j)`, zero when not stored.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (cols, vals) = self.row(i);
        match cols.binary_search(&j) {
            Ok(k) => vals[k],
            Err(_) => 0.0,
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.rows.min(self.cols)).map(|i| self.get(i, i)).collect()
    }

    /// `y = self * x`.
    pub fn mul_vec_into(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.cols, "matvec input length");
        assert_eq!(y.len(), self.rows, "matvec output length");
        for (i, yi) in y.iter_mut().enumerate() {
            let (cols, vals) = self.row(i);
            *yi = cols.iter().zip(vals).map(|(&c, &v)| v * x[c]).sum();
        }
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.rows];
        self.mul_vec_into(x, &mut y);
        y
    }

    /// `y += alpha * self^T * x` without forming the transpose.
    pub fn mul_transpose_vec_acc(&self, alpha: f64, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.rows, "transpose matvec input length");
        assert_eq!(y.len(), self.cols, "transpose matvec output length");
        for (i, &xi) in x.iter().enumerate() {
            if xi == 0.0 {
                continue;
            }
            let (cols, vals) = self.row(i);
            let s = alpha * xi;
            for (&c, &v) in cols.iter().zip(vals) {
                y[c] += s * v;
            }
        }
    }

    pub fn mul_transpose_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.cols];
        self.mul_transpose_vec_acc(1.0, x, &mut y);
        y
    }

    pub fn transpose(&self) -> SparseMatrix {
        let mut b = TripletBuilder::with_capacity(self.cols, self.rows, self.nnz());
        for i in 0..self.rows {
            let (cols, vals) = self.row(i);
            for (&c, &v) in cols.iter().zip(vals) {
                b.push(c, i, v);
            }
        }
        b.build()
    }

    pub fn scale(&self, alpha: f64) -> SparseMatrix {
        let mut out = self.clone();
        out.values.iter_mut().for_each(|v| *v *= alpha);
        out
    }

    /// `alpha * self + beta * other` over the union of both patterns.
    pub fn add_scaled(&self, alpha: f64, other: &SparseMatrix, beta: f64) -> SparseMatrix {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols), "add shape");
        let mut row_ptr = Vec::with_capacity(self.rows + 1);
        let mut col_idx = Vec::with_capacity(self.nnz().max(other.nnz()));
        let mut values = Vec::with_capacity(col_idx.capacity());
        row_ptr.push(0);
        for i in 0..self.rows {
            let (ca, va) = self.row(i);
            let (cb, vb) = other.row(i);
            let (mut p, mut q) = (0, 0);
            while p < ca.len() || q < cb.len() {
                let take_a = q >= cb.len() || (p < ca.len() && ca[p] <= cb[q]);
                let take_b = p >= ca.len() || (q < cb.len() && cb[q] <= ca[p]);
                let (c, v) = match (take_a, take_b) {
                    (true, true) => {
                        let r = (ca[p], alpha * va[p] + beta * vb[q]);
                        p += 1;
                        q += 1;
                        r
                    }
                    (true, false) => {
                        let r = (ca[p], alpha * va[p]);
                        p += 1;
                        r
                    }
                    _ => {
                        let r = (cb[q], beta * vb[q]);
                        q += 1;
                        r
                    }
                };
                col_idx.push(c);
                values.push(v);
            }
            row_ptr.push(col_idx.len());
        }
        SparseMatrix {
            rows: self.rows,
            cols: self.cols,
            row_ptr,
            col_idx,
            values,
        }
    }

    pub fn add(&self, other: &SparseMatrix) -> SparseMatrix {
        self.add_scaled(1.0, other, 1.0)
    }

    /// `self * diag(weights) * self` for a symmetric `self`.
    ///
    /// Each term is formed as `(a_ik * a_kj) * w_k` and summed over increasing
    /// `k`, so entries `(i, j)` and `(j, i)` are bitwise equal.
    pub fn symmetric_sandwich(&self, weights: &[f64]) -> SparseMatrix {
        assert!(self.is_square(), "sandwich needs a square matrix");
        assert_eq!(weights.len(), self.cols);
        let n = self.rows;
        let mut acc = vec![0.0f64; n];
        let mut marker = vec![usize::MAX; n];
        let mut touched: Vec<usize> = Vec::new();
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        row_ptr.push(0);
        for i in 0..n {
            touched.clear();
            let (ck, vk) = self.row(i);
            for (&k, &a_ik) in ck.iter().zip(vk) {
                let w = weights[k];
                let (cj, vj) = self.row(k);
                for (&j, &a_kj) in cj.iter().zip(vj) {
                    if marker[j] != i {
                        marker[j] = i;
                        acc[j] = 0.0;
                        touched.push(j);
                    }
                    acc[j] += (a_ik * a_kj) * w;
                }
            }
            touched.sort_unstable();
            for &j in &touched {
                col_idx.push(j);
                values.push(acc[j]);
            }
            row_ptr.push(col_idx.len());
        }
        SparseMatrix {
            rows: n,
            cols: n,
            row_ptr,
            col_idx,
            values,
        }
    }

    /// `self^T * self`, with bitwise-symmetric entries.
    pub fn gram(&self) -> SparseMatrix {
        let mut b = TripletBuilder::new(self.cols, self.cols);
        for i in 0..self.rows {
            let (cols, vals) = self.row(i);
            for (&j, &a_ij) in cols.iter().zip(vals) {
                for (&k, &a_ik) in cols.iter().zip(vals) {
                    b.push(j, k, a_ij * a_ik);
                }
            }
        }
        b.build()
    }

    /// True when every stored `(i, j)` has a bitwise-equal `(j, i)`.
    pub fn is_exactly_symmetric(&self) -> bool {
        if !self.is_square() {
            return false;
        }
        (0..self.rows).all(|i| {
            let (cols, vals) = self.row(i);
            cols.iter()
                .zip(vals)
                .all(|(&j, &v)| self.get(j, i).to_bits() == v.to_bits())
        })
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.rows).map(|i| self.row(i).1.iter().sum()).collect()
    }

    /// `x^T self x`.
    pub fn quadratic_form(&self, x: &[f64]) -> f64 {
        self.mul_vec(x).iter().zip(x).map(|(a, b)| a * b).sum()
    }

    /// Row-major dense copy.
    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut out = vec![vec![0.0; self.cols]; self.rows];
        for (i, row) in out.iter_mut().enumerate() {
            let (cols, vals) = self.row(i);
            for (&c, &v) in cols.iter().zip(vals) {
                row[c] = v;
            }
        }
        out
    }

    /// Writes MatrixMarket coordinate format (1-based indices).
    pub fn write_matrix_market<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "%%MatrixMarket matrix coordinate real general")?;
        writeln!(w, "{} {} {}", self.rows, self.cols, self.nnz())?;
        for i in 0..self.rows {
            let (cols, vals) = self.row(i);
            for (&c, &v) in cols.iter().zip(vals) {
                writeln!(w, "{} {} {:e}", i + 1, c + 1, v)?;
            }
        }
        Ok(())
    }

    /// Reads MatrixMarket coordinate format written by [`Self::write_matrix_market`].
    pub fn read_matrix_market(text: &str) -> Result<SparseMatrix> {
        let bad = |m: &str| Error::InvalidArgument(format!("matrix market: {m}"));
        let mut lines = text.lines().filter(|l| !l.starts_with('%') && !l.trim().is_empty());
        let header = lines.next().ok_or_else(|| bad("missing size line"))?;
        let dims: Vec<usize> = header
            .split_whitespace()
            .map(|t| t.parse().map_err(|_| bad("bad size line")))
            .collect::<Result<_>>()?;
        let [rows, cols, nnz] = dims[..] else {
            return Err(bad("size line needs three integers"));
        };
        let mut b = TripletBuilder::with_capacity(rows, cols, nnz);
        for line in lines {
            let t: Vec<&str> = line.split_whitespace().collect();
            if t.len() != 3 {
                return Err(bad("entry needs three fields"));
            }
            let r: usize = t[0].parse().map_err(|_| bad("bad row"))?;
            let c: usize = t[1].parse().map_err(|_| bad("bad column"))?;
            let v: f64 = t[2].parse().map_err(|_| bad("bad value"))?;
            if r == 0 || c == 0 || r > rows || c > cols {
                return Err(bad("index out of range"));
            }
            b.push(r - 1, c - 1, v);
        }
        Ok(b.build())
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}
