//! Compressed sparse row matrices.

use rayon::prelude::*;

use crate::dense::Matrix;
use crate::error::{Error, Result};

/// Row count above which `spmm` splits rows across the rayon pool.
const PAR_ROWS: usize = 4096;

/// CSR matrix with sorted, duplicate-free column indices in every row.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    n_rows: usize,
    n_cols: usize,
    row_offsets: Vec<usize>,
    col_indices: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    /// Validates raw CSR arrays.
    pub fn from_csr(
        n_rows: usize,
        n_cols: usize,
        row_offsets: Vec<usize>,
        col_indices: Vec<usize>,
        values: Vec<f64>,
    ) -> Result<Self> {
        if row_offsets.len() != n_rows + 1 || row_offsets[0] != 0 {
            return Err(Error::Format(format!(
                "row_offsets must have length {} and start at 0",
                n_rows + 1
            )));
        }
        if col_indices.len() != values.len() || row_offsets[n_rows] != values.len() {
            return Err(Error::Format(
                "row_offsets, col_indices and values disagree on nnz".into(),
            ));
        }
        for r in 0..n_rows {
            let (lo, hi) = (row_offsets[r], row_offsets[r + 1]);
            if lo > hi {
                return Err(Error::Format(format!("row_offsets decrease at row {r}")));
            }
            let cols = &col_indices[lo..hi];
            if cols.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::Format(format!(
                    "row {r} columns are not strictly increasing"
                )));
            }
            if let Some(&c) = cols.last() {
                if c >= n_cols {
                    return Err(Error::Index {
                        index: c,
                        bound: n_cols,
                    });
                }
            }
        }
        Ok(SparseMatrix {
            n_rows,
            n_cols,
            row_offsets,
            col_indices,
            values,
        })
    }

    /// Builds from `(row, col, value)` triplets; duplicates are summed.
    pub fn from_triplets(
        n_rows: usize,
        n_cols: usize,
        triplets: impl IntoIterator<Item = (usize, usize, f64)>,
    ) -> Result<Self> {
        let mut entries: Vec<(usize, usize, f64)> = triplets.into_iter().collect();
        for &(r, c, _) in &entries {
            if r >= n_rows {
                return Err(Error::Index {
                    index: r,
                    bound: n_rows,
                });
            }
            if c >= n_cols {
                return Err(Error::Index {
                    index: c,
                    bound: n_cols,
                });
            }
        }
        entries.sort_by_key(|&(r, c, _)| (r, c));

        let mut row_offsets = vec![0usize; n_rows + 1];
        let mut col_indices = Vec::with_capacity(entries.len());
        let mut values: Vec<f64> = Vec::with_capacity(entries.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in entries {
            if last == Some((r, c)) {
                *values.last_mut().expect("duplicate follows an entry") += v;
                continue;
            }
            last = Some((r, c));
            row_offsets[r + 1] += 1;
            col_indices.push(c);
            values.push(v);
        }
        for r in 0..n_rows {
            row_offsets[r + 1] += row_offsets[r];
        }
        Ok(SparseMatrix {
            n_rows,
            n_cols,
            row_offsets,
            col_indices,
            values,
        })
    }

    pub fn identity(n: usize) -> Self {
        SparseMatrix {
            n_rows: n,
            n_cols: n,
            row_offsets: (0..=n).collect(),
            col_indices: (0..n).collect(),
            values: vec![1.0; n],
        }
    }

    pub fn zeros(n_rows: usize, n_cols: usize) -> Self {
        SparseMatrix {
            n_rows,
            n_cols,
            row_offsets: vec![0; n_rows + 1],
            col_indices: Vec::new(),
            values: Vec::new(),
        }
    }

    /// Keeps the exact non-zero pattern of a dense matrix.
    pub fn from_dense(m: &Matrix) -> Self {
        let triplets = (0..m.rows()).flat_map(|r| {
            (0..m.cols()).filter_map(move |c| {
                let v = m.get(r, c);
                (v != 0.0).then_some((r, c, v))
            })
        });
        SparseMatrix::from_triplets(m.rows(), m.cols(), triplets)
            .expect("dense indices are in range")
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

    pub fn row_offsets(&self) -> &[usize] {
        &self.row_offsets
    }

    pub fn col_indices(&self) -> &[usize] {
        &self.col_indices
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn is_square(&self) -> bool {
        self.n_rows == self.n_cols
    }

    /// Column indices and values stored in row `r`.
    pub fn row(&self, r: usize) -> (&[usize], &[f64]) {
        let (lo, hi) = (self.row_offsets[r], self.row_offsets[r + 1]);
        (&self.col_indices[lo..hi], &self.values[lo..hi])
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        let (cols, vals) = self.row(r);
        cols.binary_search(&c).map_or(0.0, |i| vals[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.n_rows).flat_map(move |r| {
            let (cols, vals) = self.row(r);
            cols.iter().zip(vals).map(move |(&c, &v)| (r, c, v))
        })
    }

    pub fn to_dense(&self) -> Matrix {
        let mut m = Matrix::zeros(self.n_rows, self.n_cols);
        for (r, c, v) in self.iter() {
            m.set(r, c, v);
        }
        m
    }

    pub fn transpose(&self) -> SparseMatrix {
        SparseMatrix::from_triplets(self.n_cols, self.n_rows, self.iter().map(|(r, c, v)| (c, r, v)))
            .expect("transposed indices are in range")
    }

    /// Same pattern with every stored value replaced by `f(row, col, value)`.
    pub fn map_values(&self, mut f: impl FnMut(usize, usize, f64) -> f64) -> SparseMatrix {
        let mut out = self.clone();
        for r in 0..self.n_rows {
            for i in self.row_offsets[r]..self.row_offsets[r + 1] {
                out.values[i] = f(r, self.col_indices[i], self.values[i]);
            }
        }
        out
    }

    /// `self · v` for a vector.
    pub fn matvec(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.n_cols {
            return Err(Error::shape(
                "matvec",
                format!("{}x{} · {}", self.n_rows, self.n_cols, v.len()),
            ));
        }
        Ok((0..self.n_rows)
            .map(|r| {
                let (cols, vals) = self.row(r);
                cols.iter().zip(vals).map(|(&c, &a)| a * v[c]).sum()
            })
            .collect())
    }

    /// Sparse × dense product. Each output row accumulates its terms in
    /// ascending column order, independent of how rows are scheduled.
    pub fn spmm(&self, x: &Matrix) -> Result<Matrix> {
        if x.rows() != self.n_cols {
            return Err(Error::shape(
                "spmm",
                format!("{}x{} · {:?}", self.n_rows, self.n_cols, x.shape()),
            ));
        }
        let d = x.cols();
        let mut out = Matrix::zeros(self.n_rows, d);
        if d == 0 {
            return Ok(out);
        }
        let fill = |(r, out_row): (usize, &mut [f64])| {
            let (cols, vals) = self.row(r);
            for (&c, &a) in cols.iter().zip(vals) {
                for (o, &xv) in out_row.iter_mut().zip(x.row(c)) {
                    *o += a * xv;
                }
            }
        };
        if self.n_rows >= PAR_ROWS {
            out.as_mut_slice().par_chunks_mut(d).enumerate().for_each(fill);
        } else {
            out.as_mut_slice().chunks_mut(d).enumerate().for_each(fill);
        }
        Ok(out)
    }

    /// `I − self`, keeping the union of the stored pattern and the diagonal.
    pub fn identity_minus(&self) -> Result<SparseMatrix> {
        if !self.is_square() {
            return Err(Error::shape(
                "identity_minus",
                format!("{}x{} is not square", self.n_rows, self.n_cols),
            ));
        }
        let n = self.n_rows;
        SparseMatrix::from_triplets(
            n,
            n,
            self.iter()
                .map(|(r, c, v)| (r, c, -v))
                .chain((0..n).map(|i| (i, i, 1.0))),
        )
    }

    pub fn is_symmetric(&self) -> bool {
        self.is_square() && self.iter().all(|(r, c, v)| self.get(c, r) == v)
    }
}
