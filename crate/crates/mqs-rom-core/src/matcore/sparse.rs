//! Compressed sparse row matrix. Built from triplets; duplicates are summed,
//! exact zeros dropped, column indices sorted within each row. Iteration
//! orders are fixed so identical inputs produce bit-identical results.

use super::{DMat, DVec, MatError};

#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    nrows: usize,
    ncols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    vals: Vec<f64>,
}

impl SparseMatrix {
    /// Assemble from (row, col, value) triplets. Duplicate positions are
    /// summed; entries that cancel to exactly zero are dropped.
    pub fn from_triplets(
        nrows: usize,
        ncols: usize,
        triplets: &[(usize, usize, f64)],
    ) -> Result<Self, MatError> {
        for (i, &(r, c, _)) in triplets.iter().enumerate() {
            if r >= nrows || c >= ncols {
                return Err(MatError::InvalidTriplet {
                    index: i,
                    row: r,
                    col: c,
                    shape: (nrows, ncols),
                });
            }
        }
        let mut sorted: Vec<(usize, usize, f64)> = triplets.to_vec();
        sorted.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));

        let mut row_ptr = vec![0usize; nrows + 1];
        let mut col_idx = Vec::with_capacity(sorted.len());
        let mut vals = Vec::with_capacity(sorted.len());
        let mut k = 0;
        for r in 0..nrows {
            while k < sorted.len() && sorted[k].0 == r {
                let c = sorted[k].1;
                let mut v = 0.0;
                while k < sorted.len() && sorted[k].0 == r && sorted[k].1 == c {
                    v += sorted[k].2;
                    k += 1;
                }
                if v != 0.0 {
                    col_idx.push(c);
                    vals.push(v);
                }
            }
            row_ptr[r + 1] = col_idx.len();
        }
        Ok(SparseMatrix {
            nrows,
            ncols,
            row_ptr,
            col_idx,
            vals,
        })
    }

    pub fn identity(n: usize) -> Self {
        let triplets: Vec<_> = (0..n).map(|i| (i, i, 1.0)).collect();
        SparseMatrix::from_triplets(n, n, &triplets).unwrap()
    }

    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        SparseMatrix::from_triplets(nrows, ncols, &[]).unwrap()
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    /// Column indices and values of row `i`.
    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let lo = self.row_ptr[i];
        let hi = self.row_ptr[i + 1];
        (&self.col_idx[lo..hi], &self.vals[lo..hi])
    }

    pub fn triplet_iter(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.nrows).flat_map(move |r| {
            let (cols, vals) = self.row(r);
            cols.iter().zip(vals.iter()).map(move |(&c, &v)| (r, c, v))
        })
    }

    pub fn matvec(&self, x: &DVec) -> Result<DVec, MatError> {
        if x.len() != self.ncols {
            return Err(MatError::DimensionMismatch {
                op: "matvec",
                expected: (self.ncols, 1),
                got: (x.len(), 1),
            });
        }
        let mut y = DVec::zeros(self.nrows);
        for r in 0..self.nrows {
            let (cols, vals) = self.row(r);
            let mut s = 0.0;
            for (&c, &v) in cols.iter().zip(vals.iter()) {
                s += v * x[c];
            }
            y[r] = s;
        }
        Ok(y)
    }

    /// `Aᵀ x` without forming the transpose.
    pub fn tr_matvec(&self, x: &DVec) -> Result<DVec, MatError> {
        if x.len() != self.nrows {
            return Err(MatError::DimensionMismatch {
                op: "tr_matvec",
                expected: (self.nrows, 1),
                got: (x.len(), 1),
            });
        }
        let mut y = DVec::zeros(self.ncols);
        for r in 0..self.nrows {
            let (cols, vals) = self.row(r);
            let xr = x[r];
            if xr != 0.0 {
                for (&c, &v) in cols.iter().zip(vals.iter()) {
                    y[c] += v * xr;
                }
            }
        }
        Ok(y)
    }

    pub fn transpose(&self) -> SparseMatrix {
        let triplets: Vec<_> = self.triplet_iter().map(|(r, c, v)| (c, r, v)).collect();
        SparseMatrix::from_triplets(self.ncols, self.nrows, &triplets).unwrap()
    }

    pub fn scaled(&self, s: f64) -> SparseMatrix {
        let mut out = self.clone();
        for v in &mut out.vals {
            *v *= s;
        }
        out
    }

    pub fn add(&self, other: &SparseMatrix) -> Result<SparseMatrix, MatError> {
        if self.nrows != other.nrows || self.ncols != other.ncols {
            return Err(MatError::DimensionMismatch {
                op: "sparse add",
                expected: (self.nrows, self.ncols),
                got: (other.nrows, other.ncols),
            });
        }
        let mut triplets: Vec<_> = self.triplet_iter().collect();
        triplets.extend(other.triplet_iter());
        SparseMatrix::from_triplets(self.nrows, self.ncols, &triplets)
    }

    pub fn to_dense(&self) -> DMat {
        let mut d = DMat::zeros(self.nrows, self.ncols);
        for (r, c, v) in self.triplet_iter() {
            d[(r, c)] = v;
        }
        d
    }

    pub fn from_dense(m: &DMat) -> SparseMatrix {
        let mut triplets = Vec::new();
        for r in 0..m.nrows() {
            for c in 0..m.ncols() {
                if m[(r, c)] != 0.0 {
                    triplets.push((r, c, m[(r, c)]));
                }
            }
        }
        SparseMatrix::from_triplets(m.nrows(), m.ncols(), &triplets).unwrap()
    }

    /// Dense product `A B` for a thin dense factor.
    pub fn mul_dense(&self, b: &DMat) -> Result<DMat, MatError> {
        if b.nrows() != self.ncols {
            return Err(MatError::DimensionMismatch {
                op: "sparse * dense",
                expected: (self.ncols, b.ncols()),
                got: b.shape(),
            });
        }
        let mut out = DMat::zeros(self.nrows, b.ncols());
        for r in 0..self.nrows {
            let (cols, vals) = self.row(r);
            for j in 0..b.ncols() {
                let mut s = 0.0;
                for (&c, &v) in cols.iter().zip(vals.iter()) {
                    s += v * b[(c, j)];
                }
                out[(r, j)] = s;
            }
        }
        Ok(out)
    }

    /// Dense product `Aᵀ B` without forming the transpose.
    pub fn tr_mul_dense(&self, b: &DMat) -> Result<DMat, MatError> {
        if b.nrows() != self.nrows {
            return Err(MatError::DimensionMismatch {
                op: "sparseᵀ * dense",
                expected: (self.nrows, b.ncols()),
                got: b.shape(),
            });
        }
        let mut out = DMat::zeros(self.ncols, b.ncols());
        for r in 0..self.nrows {
            let (cols, vals) = self.row(r);
            for j in 0..b.ncols() {
                let brj = b[(r, j)];
                if brj != 0.0 {
                    for (&c, &v) in cols.iter().zip(vals.iter()) {
                        out[(c, j)] += v * brj;
                    }
                }
            }
        }
        Ok(out)
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.vals.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.vals.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    /// Compressed sparse column view as (col_ptr, row_idx, vals).
    pub fn to_csc(&self) -> (Vec<usize>, Vec<usize>, Vec<f64>) {
        let nnz = self.nnz();
        let mut col_ptr = vec![0usize; self.ncols + 1];
        for &c in &self.col_idx {
            col_ptr[c + 1] += 1;
        }
        for c in 0..self.ncols {
            col_ptr[c + 1] += col_ptr[c];
        }
        let mut next = col_ptr.clone();
        let mut row_idx = vec![0usize; nnz];
        let mut vals = vec![0.0f64; nnz];
        for (r, c, v) in self.triplet_iter() {
            let p = next[c];
            row_idx[p] = r;
            vals[p] = v;
            next[c] += 1;
        }
        (col_ptr, row_idx, vals)
    }
}
