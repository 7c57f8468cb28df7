use super::{Result, Tensor, TensorError};

/// Compressed-sparse-row matrix of constants (normalized adjacencies).
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    rows: usize,
    cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    /// Builds from `(row, col, value)` triplets; duplicates are summed.
    pub fn from_triplets(rows: usize, cols: usize, mut triplets: Vec<(usize, usize, f64)>) -> Result<Self> {
        for &(r, c, _) in &triplets {
            if r >= rows {
                return Err(TensorError::IndexOutOfRange {
                    op: "sparse",
                    index: r,
                    bound: rows,
                });
            }
            if c >= cols {
                return Err(TensorError::IndexOutOfRange {
                    op: "sparse",
                    index: c,
                    bound: cols,
                });
            }
        }
        triplets.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut row_ptr = vec![0; rows + 1];
        let mut col_idx: Vec<usize> = Vec::with_capacity(triplets.len());
        let mut values: Vec<f64> = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in triplets {
            if last == Some((r, c)) {
                *values.last_mut().expect("duplicate follows an entry") += v;
                continue;
            }
            last = Some((r, c));
            row_ptr[r + 1] += 1;
            col_idx.push(c);
            values.push(v);
        }
        for r in 0..rows {
            row_ptr[r + 1] += row_ptr[r];
        }
        Ok(SparseMatrix {
            rows,
            cols,
            row_ptr,
            col_idx,
            values,
        })
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

    /// Nonzeros of row `r` as `(col, value)`.
    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.row_ptr[r]..self.row_ptr[r + 1];
        self.col_idx[span.clone()]
            .iter()
            .copied()
            .zip(self.values[span].iter().copied())
    }

    pub fn to_dense(&self) -> Tensor {
        let mut t = Tensor::zeros(&[self.rows, self.cols]);
        for r in 0..self.rows {
            for (c, v) in self.row(r) {
                t.data_mut()[r * self.cols + c] += v;
            }
        }
        t
    }

    /// `self · x` for a dense `x` with `cols` rows.
    pub fn matmul(&self, x: &Tensor) -> Result<Tensor> {
        if x.shape().len() != 2 || x.rows() != self.cols {
            return Err(TensorError::ShapeMismatch {
                op: "spmm",
                lhs: vec![self.rows, self.cols],
                rhs: x.shape().to_vec(),
            });
        }
        let d = x.cols();
        let mut out = vec![0.0; self.rows * d];
        for r in 0..self.rows {
            let dst = &mut out[r * d..(r + 1) * d];
            for (c, v) in self.row(r) {
                for (o, xi) in dst.iter_mut().zip(x.row(c)) {
                    *o += v * xi;
                }
            }
        }
        Tensor::matrix(self.rows, d, out)
    }

    /// `selfᵀ · g` for a dense `g` with `rows` rows.
    pub(crate) fn transpose_matmul(&self, g: &Tensor) -> Tensor {
        let d = g.cols();
        let mut out = vec![0.0; self.cols * d];
        for r in 0..self.rows {
            let src = g.row(r);
            for (c, v) in self.row(r) {
                for (o, gi) in out[c * d..(c + 1) * d].iter_mut().zip(src) {
                    *o += v * gi;
                }
            }
        }
        Tensor::matrix(self.cols, d, out).expect("sized by construction")
    }
}
