//! Compressed-row sparse matrices for the assembled Galerkin pencils.

use std::io::Write;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Rectangular sparse matrix in compressed-row layout.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    pub nrows: usize,
    pub ncols: usize,
    pub row_offsets: Vec<usize>,
    pub col_indices: Vec<usize>,
    pub values: Vec<f64>,
}

impl CsrMatrix {
    /// Compress (row, col, value) triplets, summing duplicates. Triplets are
    /// sorted internally, so the result does not depend on insertion order.
    pub fn from_triplets(
        nrows: usize,
        ncols: usize,
        mut triplets: Vec<(usize, usize, f64)>,
    ) -> CsrMatrix {
        // Stable sort: equal (row, col) keys keep insertion order, so the
        // floating-point summation order is deterministic.
        triplets.sort_by_key(|&(r, c, _)| (r, c));
        let mut row_counts = vec![0usize; nrows + 1];
        let mut col_indices = Vec::new();
        let mut values = Vec::new();
        let mut i = 0;
        while i < triplets.len() {
            let (r, c, mut v) = triplets[i];
            debug_assert!(r < nrows && c < ncols);
            i += 1;
            while i < triplets.len() && triplets[i].0 == r && triplets[i].1 == c {
                v += triplets[i].2;
                i += 1;
            }
            col_indices.push(c);
            values.push(v);
            row_counts[r + 1] += 1;
        }
        for r in 0..nrows {
            row_counts[r + 1] += row_counts[r];
        }
        let row_offsets = row_counts;
        CsrMatrix {
            nrows,
            ncols,
            row_offsets,
            col_indices,
            values,
        }
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, r: usize) -> (&[usize], &[f64]) {
        let range = self.row_offsets[r]..self.row_offsets[r + 1];
        (&self.col_indices[range.clone()], &self.values[range])
    }

    /// y = A x
    pub fn mul_vec(&self, x: &DVector<f64>) -> DVector<f64> {
        debug_assert_eq!(x.len(), self.ncols);
        let mut y = DVector::zeros(self.nrows);
        for r in 0..self.nrows {
            let (cols, vals) = self.row(r);
            let mut acc = 0.0;
            for (c, v) in cols.iter().zip(vals) {
                acc += v * x[*c];
            }
            y[r] = acc;
        }
        y
    }

    /// y = A^T x, computed by row-wise scatter.
    pub fn mul_transpose_vec(&self, x: &DVector<f64>) -> DVector<f64> {
        debug_assert_eq!(x.len(), self.nrows);
        let mut y = DVector::zeros(self.ncols);
        for r in 0..self.nrows {
            let (cols, vals) = self.row(r);
            for (c, v) in cols.iter().zip(vals) {
                y[*c] += v * x[r];
            }
        }
        y
    }

    /// Column-wise application to a (tall) matrix: Y = A X.
    pub fn mul_mat(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut y = DMatrix::zeros(self.nrows, x.ncols());
        for r in 0..self.nrows {
            let (cols, vals) = self.row(r);
            for j in 0..x.ncols() {
                let mut acc = 0.0;
                for (c, v) in cols.iter().zip(vals) {
                    acc += v * x[(*c, j)];
                }
                y[(r, j)] = acc;
            }
        }
        y
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.nrows, self.ncols);
        for r in 0..self.nrows {
            let (cols, vals) = self.row(r);
            for (c, v) in cols.iter().zip(vals) {
                m[(r, *c)] += v;
            }
        }
        m
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |a, v| a.max(v.abs()))
    }
}

/// Symmetric sparse matrix in compressed-row layout (full pattern stored).
#[derive(Debug, Clone, PartialEq)]
pub struct SymSparse {
    csr: CsrMatrix,
}

impl SymSparse {
    /// Build from triplets and verify value symmetry to 1e-14 relative.
    pub fn from_triplets(dim: usize, triplets: Vec<(usize, usize, f64)>) -> Result<SymSparse> {
        let csr = CsrMatrix::from_triplets(dim, dim, triplets);
        let m = SymSparse { csr };
        m.check_symmetry()?;
        Ok(m)
    }

    fn check_symmetry(&self) -> Result<()> {
        let scale = self.csr.max_abs().max(f64::MIN_POSITIVE);
        for r in 0..self.dim() {
            let (cols, vals) = self.csr.row(r);
            for (c, v) in cols.iter().zip(vals) {
                if *c < r {
                    continue;
                }
                let vt = self.get(*c, r);
                if (v - vt).abs() > 1e-14 * scale {
                    return Err(Error::NotSpd(format!(
                        "entry ({r},{c})={v} vs ({c},{r})={vt} breaks symmetry"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        let (cols, vals) = self.csr.row(r);
        match cols.binary_search(&c) {
            Ok(i) => vals[i],
            Err(_) => 0.0,
        }
    }

    pub fn dim(&self) -> usize {
        self.csr.nrows
    }

    pub fn nnz(&self) -> usize {
        self.csr.nnz()
    }

    pub fn csr(&self) -> &CsrMatrix {
        &self.csr
    }

    pub fn mul_vec(&self, x: &DVector<f64>) -> DVector<f64> {
        self.csr.mul_vec(x)
    }

    pub fn mul_mat(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        self.csr.mul_mat(x)
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        self.csr.to_dense()
    }

    pub fn diagonal(&self) -> DVector<f64> {
        DVector::from_fn(self.dim(), |i, _| self.get(i, i))
    }

    pub fn max_abs(&self) -> f64 {
        self.csr.max_abs()
    }

    /// self + beta * other, merging sparsity patterns.
    pub fn add_scaled(&self, other: &SymSparse, beta: f64) -> SymSparse {
        assert_eq!(self.dim(), other.dim());
        let mut triplets = Vec::with_capacity(self.nnz() + other.nnz());
        for r in 0..self.dim() {
            let (cols, vals) = self.csr.row(r);
            for (c, v) in cols.iter().zip(vals) {
                triplets.push((r, *c, *v));
            }
            let (cols, vals) = other.csr.row(r);
            for (c, v) in cols.iter().zip(vals) {
                triplets.push((r, *c, beta * v));
            }
        }
        let csr = CsrMatrix::from_triplets(self.dim(), self.dim(), triplets);
        SymSparse { csr }
    }

    /// Write in Matrix Market coordinate format (real symmetric, lower triangle).
    pub fn write_matrix_market<W: Write>(&self, mut w: W, comment: &str) -> Result<()> {
        let lower: Vec<(usize, usize, f64)> = (0..self.dim())
            .flat_map(|r| {
                let (cols, vals) = self.csr.row(r);
                cols.iter()
                    .zip(vals)
                    .filter(move |(c, _)| **c <= r)
                    .map(move |(c, v)| (r, *c, *v))
                    .collect::<Vec<_>>()
            })
            .collect();
        writeln!(w, "%%MatrixMarket matrix coordinate real symmetric")?;
        if !comment.is_empty() {
            writeln!(w, "% {comment}")?;
        }
        writeln!(w, "{} {} {}", self.dim(), self.dim(), lower.len())?;
        for (r, c, v) in lower {
            writeln!(w, "{} {} {v:.16e}", r + 1, c + 1)?;
        }
        Ok(())
    }
}
