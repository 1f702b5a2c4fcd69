//! Block-sparse operators on grid fields and a compact CSR matrix.
//!
//! A [`BlockOperator`] maps one per-node 3-vector field to another; row `i`
//! holds the nonzero `3x3` blocks `(j, B_ij)`. Stencil operators, block
//! diagonals and their compositions are all of this form, which is how the
//! linearized rod operator is assembled.

use nalgebra::DMatrix;

use crate::discretize::DerivativeOperator;
use crate::geometry::{Mat3, Vec3};

#[derive(Clone, Debug, PartialEq)]
pub struct BlockOperator {
    rows: Vec<Vec<(usize, Mat3)>>,
}

impl BlockOperator {
    pub fn zeros(n: usize) -> Self {
        Self { rows: vec![Vec::new(); n] }
    }

    pub fn diag(blocks: impl IntoIterator<Item = Mat3>) -> Self {
        Self {
            rows: blocks.into_iter().enumerate().map(|(i, b)| vec![(i, b)]).collect(),
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::diag(std::iter::repeat_n(Mat3::identity(), n))
    }

    /// The first-derivative stencil acting componentwise.
    pub fn first_derivative(d: &DerivativeOperator) -> Self {
        let mut op = Self::zeros(d.n_nodes());
        for i in 0..d.n_nodes() {
            for (j, w) in d.first_weights(i) {
                if w != 0.0 {
                    op.add_block(i, j, Mat3::identity() * w);
                }
            }
        }
        op
    }

    pub fn n_nodes(&self) -> usize {
        self.rows.len()
    }

    pub fn row(&self, i: usize) -> &[(usize, Mat3)] {
        &self.rows[i]
    }

    pub fn add_block(&mut self, i: usize, j: usize, block: Mat3) {
        let row = &mut self.rows[i];
        match row.binary_search_by_key(&j, |(c, _)| *c) {
            Ok(pos) => row[pos].1 += block,
            Err(pos) => row.insert(pos, (j, block)),
        }
    }

    /// `self * rhs`.
    pub fn compose(&self, rhs: &BlockOperator) -> BlockOperator {
        let mut out = Self::zeros(self.n_nodes());
        for (i, row) in self.rows.iter().enumerate() {
            for (j, a) in row {
                for (k, b) in &rhs.rows[*j] {
                    out.add_block(i, *k, a * b);
                }
            }
        }
        out
    }

    /// `diag(mats) * self`.
    pub fn left_diag(&self, mats: &[Mat3]) -> BlockOperator {
        Self {
            rows: self
                .rows
                .iter()
                .zip(mats)
                .map(|(row, m)| row.iter().map(|(j, b)| (*j, m * b)).collect())
                .collect(),
        }
    }

    pub fn add(&mut self, other: &BlockOperator) {
        for (i, row) in other.rows.iter().enumerate() {
            for (j, b) in row {
                self.add_block(i, *j, *b);
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for row in self.rows.iter_mut() {
            for (_, b) in row.iter_mut() {
                *b *= factor;
            }
        }
    }

    pub fn clear_row(&mut self, i: usize) {
        self.rows[i].clear();
    }

    pub fn apply(&self, x: &[Vec3]) -> Vec<Vec3> {
        self.rows
            .iter()
            .map(|row| row.iter().fold(Vec3::zeros(), |acc, (j, b)| acc + b * x[*j]))
            .collect()
    }
}

/// Compressed sparse row matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct CsrMatrix {
    nrows: usize,
    ncols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Builds from `(row, col, value)` triplets; duplicates are summed and
    /// exact zeros dropped.
    pub fn from_triplets(nrows: usize, ncols: usize, mut triplets: Vec<(usize, usize, f64)>) -> Self {
        triplets.sort_by_key(|&(r, c, _)| (r, c));
        let mut row_ptr = vec![0; nrows + 1];
        let mut col_idx = Vec::with_capacity(triplets.len());
        let mut values: Vec<f64> = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        let mut rows_of = Vec::with_capacity(triplets.len());
        for (r, c, v) in triplets {
            assert!(r < nrows && c < ncols, "triplet ({r}, {c}) out of bounds");
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
            } else {
                col_idx.push(c);
                values.push(v);
                rows_of.push(r);
                last = Some((r, c));
            }
        }
        let mut keep_cols = Vec::with_capacity(col_idx.len());
        let mut keep_vals = Vec::with_capacity(values.len());
        for ((r, c), v) in rows_of.into_iter().zip(col_idx).zip(values) {
            if v != 0.0 {
                row_ptr[r + 1] += 1;
                keep_cols.push(c);
                keep_vals.push(v);
            }
        }
        for i in 0..nrows {
            row_ptr[i + 1] += row_ptr[i];
        }
        Self {
            nrows,
            ncols,
            row_ptr,
            col_idx: keep_cols,
            values: keep_vals,
        }
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row_nnz(&self, i: usize) -> usize {
        self.row_ptr[i + 1] - self.row_ptr[i]
    }

    pub fn row_entries(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let range = self.row_ptr[i]..self.row_ptr[i + 1];
        self.col_idx[range.clone()].iter().copied().zip(self.values[range].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.row_entries(i).find(|&(c, _)| c == j).map_or(0.0, |(_, v)| v)
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.nrows)
            .map(|i| self.row_entries(i).map(|(j, a)| a * x[j]).sum())
            .collect()
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.nrows, self.ncols);
        for i in 0..self.nrows {
            for (j, v) in self.row_entries(i) {
                m[(i, j)] = v;
            }
        }
        m
    }

    /// `out = x * self^T`. With column-major storage every term is an axpy on
    /// contiguous columns: `out[:, i] = sum_j a_ij x[:, j]`.
    pub fn right_mul_transpose(&self, x: &DMatrix<f64>, out: &mut DMatrix<f64>) {
        let m = x.nrows();
        assert_eq!(x.ncols(), self.ncols);
        assert_eq!(out.nrows(), m);
        assert_eq!(out.ncols(), self.nrows);
        let xs = x.as_slice();
        let os = out.as_mut_slice();
        for i in 0..self.nrows {
            let dst = &mut os[i * m..(i + 1) * m];
            dst.fill(0.0);
            for (j, a) in self.row_entries(i) {
                let src = &xs[j * m..(j + 1) * m];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += a * s;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rod::Grid;

    #[test]
    fn csr_matches_dense() {
        let trip = vec![(0, 1, 2.0), (2, 0, -1.0), (1, 1, 3.0), (0, 1, 1.0), (2, 2, 0.0)];
        let a = CsrMatrix::from_triplets(3, 3, trip);
        assert_eq!(a.nnz(), 3);
        assert_eq!(a.get(0, 1), 3.0);
        let dense = a.to_dense();
        let x = DMatrix::from_fn(4, 3, |i, j| (i * 3 + j) as f64 * 0.5 - 1.0);
        let mut out = DMatrix::zeros(4, 3);
        a.right_mul_transpose(&x, &mut out);
        assert!((out - &x * dense.transpose()).norm() < 1e-14);
        assert_eq!(a.mul_vec(&[1.0, 2.0, 3.0]), vec![6.0, 6.0, -1.0]);
    }

    #[test]
    fn block_operator_algebra() {
        let g = Grid::with_nodes(1.0, 6).unwrap();
        let d = DerivativeOperator::new(&g).unwrap();
        let dop = BlockOperator::first_derivative(&d);
        let field: Vec<Vec3> = g.s_values().iter().map(|s| Vec3::new(s * s, *s, 1.0)).collect();
        let direct = d.d_ds(&field).unwrap();
        let via = dop.apply(&field);
        for (a, b) in direct.iter().zip(&via) {
            assert!((a - b).norm() < 1e-12);
        }
        let m: Vec<Mat3> = (0..6).map(|i| Mat3::identity() * (i as f64 + 1.0)).collect();
        let comp = BlockOperator::diag(m.clone()).compose(&dop);
        let left = dop.left_diag(&m);
        assert_eq!(comp, left);
        let twice = dop.compose(&dop).apply(&field);
        let nested = d.d_ds(&d.d_ds(&field).unwrap()).unwrap();
        for (a, b) in twice.iter().zip(&nested) {
            assert!((a - b).norm() < 1e-9);
        }
    }
}
